"""Sparse-match structure from motion with linear depth bases.

Dense depth per frame is a mean plane plus a small linear combination of
factor planes, so bundle adjustment over sparse keypoint matches doubles as
dense depth estimation: optimizing the per-frame codes for matched keypoints
pins down the whole depth map.
"""

from .bundle import (
    BundleConfig,
    BundleProblem,
    BundleResult,
    PairConstraint,
    make_constraint,
    matches_loss,
    optimize_bundle,
    pose_loss,
    propose_pairs,
    total_loss_and_grad,
    warmstart_poses,
)
from .depthbasis import (
    DepthBasis,
    SampledBasis,
    depth_training_loss,
    evaluate_dense,
    ridge_fit,
    row_variance,
    sample_at,
)
from .evaluation import (
    MetricsReport,
    SimilarityTransform,
    camera_errors,
    depth_errors,
    evaluate_reconstruction,
    pcl_errors,
    umeyama_similarity,
)
from .geometry import (
    Intrinsics,
    Pixel,
    RigidPose,
    TaitBryanDelta,
    backproject,
    cam_to_world,
    compose_chain,
    rotation_angle_deg,
    tait_bryan_to_rotation,
)
from .matching import (
    KeypointSet,
    MatchSet,
    eight_point_fundamental,
    lmeds_verify,
    mutual_nn_match,
)
from .pairwise import (
    FrameObservation,
    PairAlignment,
    RansacConfig,
    align_pair,
    coordinate_descent_align,
    coverage_select,
    joint_ridge_update,
    ransac_progressive_grow,
    umeyama_rigid,
)
from .synthetic import GroundTruth, SceneSpec, generate_scene, perturb_relative_poses, render_matches

__version__ = "0.1.0"
