import numpy as np
import pytest

from ridgebundle.bundle import BundleConfig, BundleProblem, warmstart_poses
from ridgebundle.depthbasis import evaluate_dense, ridge_fit, row_variance, sample_at
from ridgebundle.geometry import pixel_rays, rotation_angle_deg
from ridgebundle.pairwise import RansacConfig, ransac_progressive_grow
from ridgebundle.synthetic import (
    SceneSpec,
    generate_scene,
    perturb_relative_poses,
    render_matches,
)

from oracles import quaternion_angle_deg


def small_spec(**kw):
    defaults = dict(
        n_frames=5,
        seed=11,
        keypoints_per_frame=30,
        max_keypoints_per_frame=80,
        basis_k=3,
        basis_height=10,
        basis_width=13,
        frame_width=160,
        frame_height=120,
        focal=130.0,
    )
    defaults.update(kw)
    return SceneSpec(**defaults)


def match_alignment_errors(gt, i, j, matches, kp_i, kp_j):
    """Squared 3D alignment error of each match under ground-truth state."""
    uv_i = kp_i.pixels[matches.pairs[:, 0]]
    uv_j = kp_j.pixels[matches.pairs[:, 1]]
    si = sample_at(gt.bases[i], uv_i)
    sj = sample_at(gt.bases[j], uv_j)
    d_i = si.mu + si.sigma @ gt.codes[i]
    d_j = sj.mu + sj.sigma @ gt.codes[j]
    x_i = d_i[:, None] * pixel_rays(uv_i, gt.intrinsics)
    x_j = d_j[:, None] * pixel_rays(uv_j, gt.intrinsics)
    rel = gt.relative_pose(i, j)
    resid = x_i @ rel.rotation.T + rel.translation - x_j
    return np.einsum("mi,mi->m", resid, resid)


class TestGenerateScene:
    def test_deterministic_bit_identical(self):
        a = generate_scene(small_spec())
        b = generate_scene(small_spec())
        np.testing.assert_array_equal(a.codes, b.codes)
        np.testing.assert_array_equal(a.dense_depths, b.dense_depths)
        np.testing.assert_array_equal(a.landmarks, b.landmarks)
        for f in range(a.spec.n_frames):
            np.testing.assert_array_equal(a.bases[f].mu, b.bases[f].mu)
            np.testing.assert_array_equal(a.bases[f].sigma, b.bases[f].sigma)
            np.testing.assert_array_equal(a.frame_keypoint_uv[f], b.frame_keypoint_uv[f])

    def test_dense_depth_is_basis_evaluation(self):
        gt = generate_scene(small_spec())
        for f in range(gt.spec.n_frames):
            np.testing.assert_array_equal(
                gt.dense_depths[f], evaluate_dense(gt.bases[f], gt.codes[f])
            )
            assert np.all(gt.dense_depths[f] > 0)

    def test_factor_planes_have_unit_variance(self):
        gt = generate_scene(small_spec())
        for basis in gt.bases:
            np.testing.assert_allclose(row_variance(basis), 1.0, atol=1e-6)

    def test_single_frame_ridge_recovery(self):
        gt = generate_scene(small_spec(n_frames=1))
        basis = gt.bases[0]
        target = gt.surface_depths[0]
        code = ridge_fit(basis, target, lam=1e-8)
        resid = evaluate_dense(basis, code) - target
        assert np.sqrt(np.mean(resid**2)) < 0.01

    def test_zero_noise_matches_are_exact(self):
        gt = generate_scene(small_spec())
        for i, j in [(0, 1), (1, 3), (0, 4)]:
            kp_i, kp_j, matches, labels = render_matches(gt, i, j)
            if len(matches) == 0:
                continue
            err = match_alignment_errors(gt, i, j, matches, kp_i, kp_j)
            assert err.max() < 1e-9

    def test_identity_motion_pair(self):
        gt = generate_scene(small_spec(n_frames=2, step_rot_max_deg=0.0, step_trans_max=0.0))
        kp_i, kp_j, matches, _ = render_matches(gt, 0, 1)
        assert len(matches) > 10
        err = match_alignment_errors(gt, 0, 1, matches, kp_i, kp_j)
        assert err.max() < 1e-12

    def test_trajectory_stays_in_room(self):
        gt = generate_scene(small_spec(n_frames=40))
        half = np.array(gt.spec.room_size) / 2.0
        for pose in gt.poses:
            assert np.all(np.abs(pose.translation) < half)

    def test_infeasible_trajectory_raises(self):
        spec = small_spec(step_trans_max=5.0, max_retries=3)
        with pytest.raises(RuntimeError):
            generate_scene(spec)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            small_spec(pixel_noise=-0.1)
        with pytest.raises(ValueError):
            small_spec(outlier_rate=1.5)


class TestRenderMatches:
    def test_outlier_count_is_exact(self):
        gt = generate_scene(small_spec(outlier_rate=0.3))
        kp_i, kp_j, matches, labels = render_matches(gt, 0, 1)
        n_true = int(labels.sum())
        n_out = int((~labels).sum())
        assert n_out == int(np.ceil(0.3 * n_true))
        assert len(matches) == n_true + n_out

    def test_outliers_violate_geometry(self):
        gt = generate_scene(small_spec(outlier_rate=0.3))
        kp_i, kp_j, matches, labels = render_matches(gt, 0, 1)
        err = match_alignment_errors(gt, 0, 1, matches, kp_i, kp_j)
        assert err[labels].max() < 1e-9
        assert np.median(err[~labels]) > 1e-3

    def test_disjoint_frames_give_empty_matches(self):
        gt = generate_scene(small_spec(n_frames=12, anchor_window=2))
        kp_i, kp_j, matches, labels = render_matches(gt, 0, 11)
        assert len(matches) == 0
        assert labels.size == 0

    def test_deterministic(self):
        gt = generate_scene(small_spec(outlier_rate=0.2, pixel_noise=0.3))
        a = render_matches(gt, 1, 2)
        b = render_matches(gt, 1, 2)
        np.testing.assert_array_equal(a[2].pairs, b[2].pairs)
        np.testing.assert_array_equal(a[0].pixels, b[0].pixels)

    def test_pairwise_pipeline_recovers_pose(self):
        gt = generate_scene(small_spec(n_frames=2, keypoints_per_frame=60))
        kp_i, kp_j, matches, _ = render_matches(gt, 0, 1)
        cfg = RansacConfig(seed=0, runs=8, ridge_lambda=1e-6, min_covered_cells=20)
        result = ransac_progressive_grow(
            matches,
            (gt.bases[0], gt.bases[1]),
            (kp_i, kp_j),
            (gt.intrinsics, gt.intrinsics),
            cfg,
        )
        assert result.success
        rel = gt.relative_pose(0, 1)
        assert rotation_angle_deg(result.relative_pose.rotation, rel.rotation) < 0.05
        assert np.linalg.norm(result.relative_pose.translation - rel.translation) < 1e-3


class TestPerturbRelativePoses:
    def test_zero_sigma_matches_ground_truth(self):
        gt = generate_scene(small_spec())
        constraints = perturb_relative_poses(gt, 0.0, 0.0, seed=5)
        for c in constraints:
            rel = gt.relative_pose(c.i, c.j)
            assert quaternion_angle_deg(c.relative_pose.rotation, rel.rotation) < 1e-9
            np.testing.assert_allclose(c.relative_pose.translation, rel.translation, atol=1e-12)

    def test_deterministic(self):
        gt = generate_scene(small_spec())
        a = perturb_relative_poses(gt, 1.0, 0.02, seed=9)
        b = perturb_relative_poses(gt, 1.0, 0.02, seed=9)
        for ca, cb in zip(a, b):
            np.testing.assert_array_equal(ca.relative_pose.rotation, cb.relative_pose.rotation)
            np.testing.assert_array_equal(ca.uv_i, cb.uv_i)

    def test_perturbation_magnitude(self):
        gt = generate_scene(small_spec())
        constraints = perturb_relative_poses(gt, 2.0, 0.0, seed=6)
        angles = [
            rotation_angle_deg(c.relative_pose.rotation, gt.relative_pose(c.i, c.j).rotation)
            for c in constraints
        ]
        assert 0.5 < np.mean(angles) < 10.0

    def test_drift_accumulates_over_long_chains(self):
        spec = small_spec(n_frames=120, keypoints_per_frame=12, anchor_window=3,
                          max_keypoints_per_frame=40)
        gt = generate_scene(spec)
        pairs = [(i, i + 1) for i in range(spec.n_frames - 1)]
        constraints = perturb_relative_poses(gt, 1.0, 0.0, seed=7, pairs=pairs)
        problem = BundleProblem(spec.n_frames, spec.basis_k, constraints, BundleConfig())
        warmstart_poses(problem)
        rw, _ = problem.composed_poses()
        rel_est = rw[0].T @ rw[-1]
        rel_gt = gt.poses[0].rotation.T @ gt.poses[-1].rotation
        assert rotation_angle_deg(rel_est, rel_gt) > 1.0
