"""Pairwise camera alignment from matched keypoints and depth bases.

Alternates a closed-form rigid alignment step with a joint ridge update of
both frames' depth codes, wrapped in a progressive-growing consensus search
whose winning run is chosen by keypoint coverage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .depthbasis import DepthBasis, SampledBasis, sample_at
from .geometry import Intrinsics, RigidPose, pixel_rays
from .matching import (
    DegenerateConfiguration,
    KeypointSet,
    MatchSet,
    lmeds_verify,
    mutual_nn_match,
)


@dataclass
class RansacConfig:
    """Knobs for the progressive-growing consensus search.

    The search seeds each run with ``initial_size`` random matches, regrows
    the active set by the multiplicative factor ``growth``, and stops growing
    once the worst active squared alignment error exceeds
    ``stop_threshold ** 2`` (the threshold is a 3D distance in meters).
    Runs are compared by how many ``coverage_cell``-sized pixel squares their
    inlier keypoints cover in both frames; pairs covering fewer than
    ``min_covered_cells`` are rejected.
    """

    seed: int = 0
    initial_size: int = 3
    growth: float = 1.2
    stop_threshold: float = 0.10
    runs: int = 32
    ridge_lambda: float = 0.05
    coverage_cell: float = 10.0
    min_covered_cells: int = 30
    cd_max_iters: int = 50
    cd_tol: float = 1e-8
    # iteration cap for the re-optimizations inside the growth loop; the
    # re-selection only needs decent parameters, not full convergence
    cd_growth_iters: int = 12
    # re-optimize the coverage-selected winner to full convergence
    final_refine: bool = True

    def __post_init__(self):
        if self.growth <= 1.0:
            raise ValueError("growth factor must exceed 1")
        if self.stop_threshold <= 0:
            raise ValueError("stop threshold must be positive")
        if self.initial_size < 3:
            raise ValueError("need at least 3 seed matches")


@dataclass
class PairAlignment:
    """Result of aligning one image pair.

    ``errors`` holds the squared 3D alignment error of each surviving match,
    recomputable from the stored pose, codes, and match indices.
    """

    relative_pose: RigidPose | None
    code_i: np.ndarray | None
    code_j: np.ndarray | None
    inliers: MatchSet
    errors: np.ndarray
    coverage_score: int = 0
    success: bool = True
    message: str = ""
    objective_trace: list = field(default_factory=list)
    inlier_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))


def _umeyama_rt(x: np.ndarray, y: np.ndarray):
    """Rotation/translation of the least-squares rigid fit, unvalidated."""
    mx = x.mean(axis=0)
    my = y.mean(axis=0)
    cov = (y - my).T @ (x - mx) / x.shape[0]
    u, s, vt = np.linalg.svd(cov)
    if s[0] <= 1e-15 * max(1.0, float(np.abs(x).max())):
        raise DegenerateConfiguration("source points are all coincident")
    d = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[2] = -1.0
    r = u @ np.diag(d) @ vt
    return r, my - r @ mx


def umeyama_rigid(x: np.ndarray, y: np.ndarray) -> RigidPose:
    """Least-squares rigid transform: minimize sum ||R x_m + T - y_m||^2.

    Uses the SVD of the cross-covariance with the determinant sign fix, so a
    proper rotation (det +1) is returned even for rank-deficient (planar or
    collinear) configurations. All-coincident points are rejected.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2 or x.shape[1] != 3:
        raise ValueError("need matching (M, 3) point arrays")
    if x.shape[0] < 3:
        raise ValueError("need at least 3 points")
    r, t = _umeyama_rt(x, y)
    return RigidPose(r, t)


@dataclass
class PairData:
    """Precomputed per-match quantities for one image pair.

    Rays have unit z, so camera points are ``depth * ray`` and the sampled
    depth ``b_mu + b_sigma @ code`` keeps everything affine in the codes.
    """

    uv_i: np.ndarray
    uv_j: np.ndarray
    ray_i: np.ndarray
    ray_j: np.ndarray
    b_mu_i: np.ndarray
    b_sig_i: np.ndarray
    b_mu_j: np.ndarray
    b_sig_j: np.ndarray

    def __len__(self) -> int:
        return self.uv_i.shape[0]

    @property
    def k_i(self) -> int:
        return self.b_sig_i.shape[1]

    @property
    def k_j(self) -> int:
        return self.b_sig_j.shape[1]


def prepare_pair(
    matches: MatchSet,
    basis_i: DepthBasis,
    basis_j: DepthBasis,
    keypoints_i: KeypointSet,
    keypoints_j: KeypointSet,
    intrinsics_i: Intrinsics,
    intrinsics_j: Intrinsics,
) -> PairData:
    uv_i = keypoints_i.pixels[matches.pairs[:, 0]]
    uv_j = keypoints_j.pixels[matches.pairs[:, 1]]
    si = sample_at(basis_i, uv_i)
    sj = sample_at(basis_j, uv_j)
    return PairData(
        uv_i=uv_i,
        uv_j=uv_j,
        ray_i=pixel_rays(uv_i, intrinsics_i),
        ray_j=pixel_rays(uv_j, intrinsics_j),
        b_mu_i=si.mu,
        b_sig_i=si.sigma,
        b_mu_j=sj.mu,
        b_sig_j=sj.sigma,
    )


def _depths(data: PairData, idx, code_i, code_j):
    di = data.b_mu_i[idx] + data.b_sig_i[idx] @ code_i
    dj = data.b_mu_j[idx] + data.b_sig_j[idx] @ code_j
    return di, dj


def _points(data: PairData, idx, code_i, code_j):
    di, dj = _depths(data, idx, code_i, code_j)
    return di[:, None] * data.ray_i[idx], dj[:, None] * data.ray_j[idx]


def _errors_rt(data, idx, r, t, code_i, code_j):
    xi, xj = _points(data, idx, code_i, code_j)
    resid = xi @ r.T + t - xj
    return np.einsum("ij,ij->i", resid, resid)


def match_errors(data: PairData, idx, pose: RigidPose, code_i, code_j) -> np.ndarray:
    """Squared 3D alignment error of the indexed matches under (pose, codes)."""
    return _errors_rt(data, idx, pose.rotation, pose.translation, code_i, code_j)


def _objective(data, idx, r, t, code_i, code_j, lam):
    err = _errors_rt(data, idx, r, t, code_i, code_j)
    return float(err.sum() + lam * (code_i @ code_i + code_j @ code_j)), err


def _code_solve_cache(data: PairData, idx):
    """Pose-independent pieces of the joint code solve for one active set."""
    ray_i = data.ray_i[idx]
    ray_j = data.ray_j[idx]
    a_i = ray_i[:, :, None] * data.b_sig_i[idx][:, None, :]  # (M, 3, k_i)
    a_j = ray_j[:, :, None] * data.b_sig_j[idx][:, None, :]
    c_i = data.b_mu_i[idx][:, None] * ray_i
    c_j = data.b_mu_j[idx][:, None] * ray_j
    return a_i, a_j, c_i, c_j


def _solve_codes_cached(cache, r, t, lam: float):
    """Exact minimizer of the pair objective over both codes at fixed pose.

    The residual is affine in the stacked codes, so a single regularized
    normal-equation solve of size k_i + k_j suffices.
    """
    a_i, a_j, c_i, c_j = cache
    m, _, k_i = a_i.shape
    k_j = a_j.shape[2]
    ra_i = np.einsum("ab,mbk->mak", r, a_i)
    g = np.concatenate([ra_i, -a_j], axis=2).reshape(3 * m, k_i + k_j)
    h = (c_i @ r.T + t - c_j).reshape(3 * m)
    theta = -np.linalg.solve(g.T @ g + lam * np.eye(k_i + k_j), g.T @ h)
    return theta[:k_i], theta[k_i:]


def _solve_codes(data: PairData, idx, pose: RigidPose, lam: float):
    return _solve_codes_cached(
        _code_solve_cache(data, idx), pose.rotation, pose.translation, lam
    )


def joint_ridge_update(
    pose: RigidPose,
    sampled_i: SampledBasis,
    sampled_j: SampledBasis,
    pixels_i: np.ndarray,
    pixels_j: np.ndarray,
    intrinsics_i: Intrinsics,
    intrinsics_j: Intrinsics,
    lam: float,
):
    """Jointly refit both frames' depth codes with the pose held fixed."""
    if not lam > 0:
        raise ValueError("ridge parameter must be positive")
    if len(sampled_i.mu) != len(sampled_j.mu):
        raise ValueError("matched samples must have equal length")
    data = PairData(
        uv_i=np.asarray(pixels_i, dtype=np.float64),
        uv_j=np.asarray(pixels_j, dtype=np.float64),
        ray_i=pixel_rays(pixels_i, intrinsics_i),
        ray_j=pixel_rays(pixels_j, intrinsics_j),
        b_mu_i=sampled_i.mu,
        b_sig_i=sampled_i.sigma,
        b_mu_j=sampled_j.mu,
        b_sig_j=sampled_j.sigma,
    )
    return _solve_codes(data, slice(None), pose, lam)


@dataclass
class _CdResult:
    pose: RigidPose
    code_i: np.ndarray
    code_j: np.ndarray
    errors: np.ndarray
    objective: float
    trace: list
    ok: bool
    message: str = ""


def _coordinate_descent(data: PairData, idx, lam: float, max_iters: int, tol: float) -> _CdResult:
    code_i = np.zeros(data.k_i)
    code_j = np.zeros(data.k_j)
    cache = _code_solve_cache(data, idx)
    trace = []
    r = t = None
    prev = np.inf
    for _ in range(max_iters):
        xi, xj = _points(data, idx, code_i, code_j)
        try:
            r, t = _umeyama_rt(xi, xj)
        except DegenerateConfiguration as exc:
            return _CdResult(
                RigidPose.identity(), code_i, code_j, np.array([]), np.inf, trace, False, str(exc)
            )
        code_i, code_j = _solve_codes_cached(cache, r, t, lam)
        di, dj = _depths(data, idx, code_i, code_j)
        if np.any(di <= 0) or np.any(dj <= 0):
            return _CdResult(
                RigidPose(r, t), code_i, code_j, np.array([]), np.inf, trace, False,
                "nonpositive sampled depth under fitted codes",
            )
        obj, err = _objective(data, idx, r, t, code_i, code_j, lam)
        trace.append(obj)
        if prev - obj < tol * max(abs(prev), 1.0):
            break
        prev = obj
    return _CdResult(RigidPose(r, t), code_i, code_j, err, trace[-1], trace, True)


def coordinate_descent_align(
    matches: MatchSet,
    bases,
    keypoints,
    intrinsics,
    lam: float = 0.05,
    max_iters: int = 50,
    tol: float = 1e-8,
) -> PairAlignment:
    """Alternating rigid/ridge minimization of the pairwise alignment loss.

    ``bases``, ``keypoints`` and ``intrinsics`` are (frame_i, frame_j) tuples.
    Codes start at zero (the mean-depth prediction); each alternation step is
    an exact block minimizer, so the objective is non-increasing. Failure
    (degenerate points or nonpositive sampled depth) is reported via the
    ``success`` flag rather than an exception.
    """
    if len(matches) < 3:
        raise ValueError("need at least 3 matches")
    data = prepare_pair(matches, bases[0], bases[1], keypoints[0], keypoints[1],
                        intrinsics[0], intrinsics[1])
    res = _coordinate_descent(data, slice(None), lam, max_iters, tol)
    return PairAlignment(
        relative_pose=res.pose if res.ok else None,
        code_i=res.code_i,
        code_j=res.code_j,
        inliers=matches if res.ok else matches.subset([]),
        errors=res.errors,
        success=res.ok,
        message=res.message,
        objective_trace=res.trace,
    )


def _coverage(uv_i: np.ndarray, uv_j: np.ndarray, cell: float) -> int:
    """Distinct cell count touched in frame i plus distinct count in frame j."""
    score = 0
    for uv in (uv_i, uv_j):
        cells = np.unique(np.floor(uv / cell).astype(np.int64), axis=0)
        score += cells.shape[0]
    return score


def _single_run(data: PairData, matches: MatchSet, cfg: RansacConfig, rng) -> PairAlignment:
    n = len(data)
    active = np.sort(rng.choice(n, size=min(cfg.initial_size, n), replace=False))
    res = _coordinate_descent(data, active, cfg.ridge_lambda, cfg.cd_growth_iters, cfg.cd_tol)
    if not res.ok:
        return PairAlignment(None, None, None, matches.subset([]), np.array([]),
                             success=False, message=res.message)
    eps_sq = cfg.stop_threshold**2
    if res.errors.max() > eps_sq:
        return PairAlignment(None, None, None, matches.subset([]), np.array([]),
                             success=False, message="seed exceeded the error threshold")
    best = (active, res)
    size = len(active)
    while size < n:
        size = min(int(np.ceil(cfg.growth * size)), n)
        all_err = match_errors(data, slice(None), best[1].pose,
                               best[1].code_i, best[1].code_j)
        candidate = np.sort(np.argsort(all_err, kind="stable")[:size])
        if all_err[candidate].max() > eps_sq:
            break
        res = _coordinate_descent(data, candidate, cfg.ridge_lambda,
                                  cfg.cd_growth_iters, cfg.cd_tol)
        if not res.ok:
            break
        best = (candidate, res)
    active, res = best
    # the multiplicative growth overshoots the true consensus size, so the
    # final inlier set is every match within the threshold under the final
    # model, not just the last accepted growth step
    all_err = match_errors(data, slice(None), res.pose, res.code_i, res.code_j)
    saturated = np.flatnonzero(all_err <= eps_sq)
    if saturated.size >= active.size:
        active = saturated
    coverage = _coverage(data.uv_i[active], data.uv_j[active], cfg.coverage_cell)
    return PairAlignment(
        relative_pose=res.pose,
        code_i=res.code_i,
        code_j=res.code_j,
        inliers=matches.subset(active),
        errors=match_errors(data, active, res.pose, res.code_i, res.code_j),
        coverage_score=coverage,
        success=True,
        objective_trace=res.trace,
        inlier_indices=active,
    )


def ransac_runs(
    matches: MatchSet,
    bases,
    keypoints,
    intrinsics,
    cfg: RansacConfig,
) -> list[PairAlignment]:
    """All progressive-growing consensus runs for one pair, in run order."""
    if len(matches) < cfg.initial_size:
        raise ValueError("fewer matches than the seed size")
    data = prepare_pair(matches, bases[0], bases[1], keypoints[0], keypoints[1],
                        intrinsics[0], intrinsics[1])
    streams = [np.random.default_rng(s) for s in
               np.random.SeedSequence(cfg.seed).spawn(cfg.runs)]
    return [_single_run(data, matches, cfg, rng) for rng in streams]


def coverage_select(runs, cfg: RansacConfig) -> PairAlignment:
    """Pick the run whose inliers cover the most pixel cells; reject sparse pairs.

    Ties go to the lower run index. A best coverage below
    ``cfg.min_covered_cells`` marks the pair as a negative (success=False).
    """
    runs = list(runs)
    if not runs:
        raise ValueError("need at least one run")
    ok = [r for r in runs if r.success]
    if not ok:
        return PairAlignment(None, None, None, runs[0].inliers.subset([]), np.array([]),
                             success=False, message="all consensus runs failed")
    best = max(ok, key=lambda r: r.coverage_score)  # max keeps the first maximum
    if best.coverage_score < cfg.min_covered_cells:
        return PairAlignment(
            relative_pose=best.relative_pose,
            code_i=best.code_i,
            code_j=best.code_j,
            inliers=best.inliers,
            errors=best.errors,
            coverage_score=best.coverage_score,
            success=False,
            message=f"coverage {best.coverage_score} below {cfg.min_covered_cells}",
        )
    return best


def ransac_progressive_grow(
    matches: MatchSet,
    bases,
    keypoints,
    intrinsics,
    cfg: RansacConfig,
) -> PairAlignment:
    """Run the full consensus search and return the coverage-selected winner.

    The winner's inlier set is re-optimized to full convergence when
    ``cfg.final_refine`` is set (growth-phase optimizations are capped).
    """
    best = coverage_select(ransac_runs(matches, bases, keypoints, intrinsics, cfg), cfg)
    if cfg.final_refine and best.success and best.inlier_indices.size:
        data = prepare_pair(matches, bases[0], bases[1], keypoints[0], keypoints[1],
                            intrinsics[0], intrinsics[1])
        res = _coordinate_descent(data, best.inlier_indices, cfg.ridge_lambda,
                                  cfg.cd_max_iters, cfg.cd_tol)
        if res.ok:
            best = PairAlignment(
                relative_pose=res.pose,
                code_i=res.code_i,
                code_j=res.code_j,
                inliers=best.inliers,
                errors=res.errors,
                coverage_score=best.coverage_score,
                success=True,
                objective_trace=res.trace,
                inlier_indices=best.inlier_indices,
            )
    return best


@dataclass
class FrameObservation:
    """Everything the pairwise stage needs to know about one frame."""

    basis: DepthBasis
    keypoints: KeypointSet
    intrinsics: Intrinsics


def align_pair(
    frame_i: FrameObservation,
    frame_j: FrameObservation,
    cfg: RansacConfig,
    knn: int = 1,
) -> PairAlignment:
    """Full pairwise pipeline: mutual NN, epipolar filtering, consensus growth."""
    m0 = mutual_nn_match(frame_i.keypoints, frame_j.keypoints, k=knn)
    if len(m0) < max(cfg.initial_size, 3):
        return PairAlignment(None, None, None, m0.subset([]), np.array([]),
                             success=False, message="too few tentative matches")
    verified = lmeds_verify(m0, frame_i.keypoints, frame_j.keypoints, seed=cfg.seed)
    if len(verified) < cfg.initial_size:
        return PairAlignment(None, None, None, verified.subset([]), np.array([]),
                             success=False, message="too few verified matches")
    return ransac_progressive_grow(
        verified,
        (frame_i.basis, frame_j.basis),
        (frame_i.keypoints, frame_j.keypoints),
        (frame_i.intrinsics, frame_j.intrinsics),
        cfg,
    )
