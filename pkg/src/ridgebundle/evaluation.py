"""Reconstruction evaluation: gauge alignment and error metrics.

A monocular reconstruction is only determined up to a global similarity, so
all metrics are computed after aligning the predicted point cloud to ground
truth with a 7-d.o.f. closed-form fit (pixel-index correspondences,
stride-subsampled for tractability).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .depthbasis import DepthBasis, node_pixels
from .geometry import Intrinsics, pixel_rays, rotation_angle_deg


@dataclass
class SimilarityTransform:
    """x -> scale * rotation @ x + translation."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if np.abs(self.rotation.T @ self.rotation - np.eye(3)).max() > 1e-9:
            raise ValueError("rotation is not orthonormal")

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * pts @ self.rotation.T + self.translation

    @staticmethod
    def identity() -> "SimilarityTransform":
        return SimilarityTransform(1.0, np.eye(3), np.zeros(3))


@dataclass
class MetricsReport:
    """The six reconstruction error metrics plus bookkeeping counts."""

    camera_rotation_deg: float
    camera_center_m: float
    depth_l1: float
    depth_rmse: float
    pcl_l1: float
    pcl_rmse: float
    n_frames: int
    n_aligned_points: int

    def as_dict(self) -> dict:
        return {
            "camera_rotation_deg": self.camera_rotation_deg,
            "camera_center_m": self.camera_center_m,
            "depth_l1": self.depth_l1,
            "depth_rmse": self.depth_rmse,
            "pcl_l1": self.pcl_l1,
            "pcl_rmse": self.pcl_rmse,
            "n_frames": self.n_frames,
            "n_aligned_points": self.n_aligned_points,
        }


def umeyama_similarity(x: np.ndarray, y: np.ndarray) -> SimilarityTransform:
    """Closed-form similarity minimizing sum ||s R x_n + T - y_n||^2."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2 or x.shape[1] != 3:
        raise ValueError("need matching (N, 3) point arrays")
    n = x.shape[0]
    if n < 3:
        raise ValueError("need at least 3 points")
    mx = x.mean(axis=0)
    my = y.mean(axis=0)
    xc = x - mx
    yc = y - my
    var_x = float(np.sum(xc**2)) / n
    if var_x <= 0:
        raise ValueError("degenerate point set (all coincident)")
    cov = yc.T @ xc / n
    u, s, vt = np.linalg.svd(cov)
    d = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[2] = -1.0
    r = u @ np.diag(d) @ vt
    scale = float(np.sum(s * d)) / var_x
    if not scale > 0:
        raise ValueError("degenerate point set (nonpositive scale)")
    t = my - scale * r @ mx
    return SimilarityTransform(scale=scale, rotation=r, translation=t)


def camera_errors(pred_poses, gt_poses, sim: SimilarityTransform):
    """Mean rotation (deg) and center (m) error of gauge-aligned cameras.

    Predicted centers are scaled and transformed by ``sim``; predicted
    rotations are composed with its rotation.
    """
    if len(pred_poses) != len(gt_poses):
        raise ValueError("pose counts differ")
    rot_err = []
    center_err = []
    for p, g in zip(pred_poses, gt_poses):
        r_aligned = sim.rotation @ p.rotation
        c_aligned = sim.apply(p.translation)
        rot_err.append(rotation_angle_deg(r_aligned, g.rotation))
        center_err.append(float(np.linalg.norm(c_aligned - g.translation)))
    return float(np.mean(rot_err)), float(np.mean(center_err))


def depth_errors(pred_depths, gt_depths, scale: float = 1.0):
    """Per-pixel depth L1 and RMSE after rescaling predictions.

    Pixels with nonpositive ground truth are masked out; frame-wise means are
    averaged over frames.
    """
    if len(pred_depths) != len(gt_depths):
        raise ValueError("frame counts differ")
    l1 = []
    rmse = []
    for pred, gt in zip(pred_depths, gt_depths):
        pred = np.asarray(pred, dtype=np.float64)
        gt = np.asarray(gt, dtype=np.float64)
        if pred.shape != gt.shape:
            raise ValueError("depth resolutions differ")
        valid = gt > 0
        if not np.any(valid):
            raise ValueError("a frame has no valid ground-truth depth")
        diff = scale * pred[valid] - gt[valid]
        l1.append(float(np.mean(np.abs(diff))))
        rmse.append(float(np.sqrt(np.mean(diff**2))))
    return float(np.mean(l1)), float(np.mean(rmse))


def _cloud(poses, depths, intrinsics: Intrinsics, basis_like: DepthBasis, stride: int):
    pts = []
    uv = node_pixels(basis_like)
    rays = pixel_rays(uv, intrinsics)
    for pose, depth in zip(poses, depths):
        d = np.asarray(depth, dtype=np.float64).ravel()[::stride]
        cam = d[:, None] * rays[::stride]
        pts.append(cam @ pose.rotation.T + pose.translation)
    return np.concatenate(pts, axis=0)


def pcl_errors(
    pred_poses,
    pred_depths,
    gt_poses,
    gt_depths,
    intrinsics: Intrinsics,
    sim: SimilarityTransform,
    basis_like: DepthBasis,
    stride: int = 8,
):
    """Point-cloud L1 and RMSE between backprojected reconstructions.

    Both clouds are built by backprojecting every stride-th pixel through its
    own camera; the predicted cloud is mapped through ``sim`` and distances
    use pixel-index correspondence.
    """
    pred = _cloud(pred_poses, pred_depths, intrinsics, basis_like, stride)
    gt = _cloud(gt_poses, gt_depths, intrinsics, basis_like, stride)
    if pred.shape[0] == 0:
        raise ValueError("empty point cloud")
    dist = np.linalg.norm(sim.apply(pred) - gt, axis=1)
    return float(np.mean(dist)), float(np.sqrt(np.mean(dist**2)))


def evaluate_reconstruction(
    pred_poses,
    pred_depths,
    gt_poses,
    gt_depths,
    intrinsics: Intrinsics,
    basis_like: DepthBasis,
    stride: int = 8,
) -> MetricsReport:
    """Align the predicted reconstruction to ground truth and report errors."""
    pred_cloud = _cloud(pred_poses, pred_depths, intrinsics, basis_like, stride)
    gt_cloud = _cloud(gt_poses, gt_depths, intrinsics, basis_like, stride)
    sim = umeyama_similarity(pred_cloud, gt_cloud)
    rot_err, center_err = camera_errors(pred_poses, gt_poses, sim)
    depth_l1, depth_rmse = depth_errors(pred_depths, gt_depths, scale=sim.scale)
    pcl_l1, pcl_rmse = pcl_errors(
        pred_poses, pred_depths, gt_poses, gt_depths, intrinsics, sim, basis_like, stride
    )
    return MetricsReport(
        camera_rotation_deg=rot_err,
        camera_center_m=center_err,
        depth_l1=depth_l1,
        depth_rmse=depth_rmse,
        pcl_l1=pcl_l1,
        pcl_rmse=pcl_rmse,
        n_frames=len(pred_poses),
        n_aligned_points=pred_cloud.shape[0],
    )
