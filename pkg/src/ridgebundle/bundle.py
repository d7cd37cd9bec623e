"""Scene-scale bundle adjustment over poses, depth codes, and match trust.

Absolute rotations are cumulative products of per-frame Tait-Bryan increments
and translations are cumulative sums, so the optimizer works on per-frame
deltas. Each pairwise constraint contributes a robust match term, where a
per-match auxiliary variable soft-gates the (unsquared) 3D residual through a
logistic, plus an elementwise-L1 consistency term tying absolute poses to the
pairwise relative pose. Gradients are fully analytic, including the chain
rule through the cumulative composition.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .depthbasis import DepthBasis, evaluate_dense, sample_at
from .geometry import (
    Intrinsics,
    RigidPose,
    compose_chain_arrays,
    pixel_rays,
    tait_bryan_derivatives,
)

logger = logging.getLogger(__name__)

# residuals below this are treated as exactly coincident points: the norm's
# subgradient direction is taken as zero instead of a noise-dominated unit
# vector
COINCIDENT_TOL = 1e-12


@dataclass
class BundleConfig:
    """Optimizer settings.

    ``trust_regularizer`` is the weight of the logistic penalty that stops
    every match from being switched off. The warm start runs
    ``warmstart_budget_factor * n_constraints`` steps on the pose term alone,
    activating constraint ``c`` once the step counter reaches
    ``c * warmstart_ramp``. Termination compares means of consecutive
    ``convergence_window``-step loss windows. Loss and gradient reductions
    always run in constraint order here, so ``deterministic`` records intent
    rather than changing numerics.
    """

    trust_regularizer: float = 0.3
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    beta_weight_decay: float = 1e-2
    u_step_scale: float = 30.0
    pose_term_weight: float = 1.0
    warmstart_budget_factor: int = 6
    warmstart_ramp: int = 5
    convergence_tol: float = 1e-6
    convergence_window: int = 100
    max_iterations: int = 3000
    depth_floor: float = 0.01
    deterministic: bool = True

    def __post_init__(self):
        if not self.trust_regularizer > 0:
            raise ValueError("trust regularizer must be positive")
        if not self.step_size > 0:
            raise ValueError("step size must be positive")


@dataclass
class PairConstraint:
    """One image pair's verified matches and relative pose for the bundle."""

    i: int
    j: int
    relative_pose: RigidPose
    uv_i: np.ndarray
    uv_j: np.ndarray
    ray_i: np.ndarray
    ray_j: np.ndarray
    b_mu_i: np.ndarray
    b_sig_i: np.ndarray
    b_mu_j: np.ndarray
    b_sig_j: np.ndarray

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("a constraint must join two distinct frames")
        if self.uv_i.shape[0] < 1:
            raise ValueError("a constraint needs at least one match")

    def __len__(self) -> int:
        return self.uv_i.shape[0]


def make_constraint(
    i: int,
    j: int,
    relative_pose: RigidPose,
    uv_i: np.ndarray,
    uv_j: np.ndarray,
    basis_i: DepthBasis,
    basis_j: DepthBasis,
    intrinsics_i: Intrinsics,
    intrinsics_j: Intrinsics,
) -> PairConstraint:
    """Sample both bases at the matched pixels and assemble a constraint."""
    uv_i = np.asarray(uv_i, dtype=np.float64)
    uv_j = np.asarray(uv_j, dtype=np.float64)
    si = sample_at(basis_i, uv_i)
    sj = sample_at(basis_j, uv_j)
    return PairConstraint(
        i=i,
        j=j,
        relative_pose=relative_pose,
        uv_i=uv_i,
        uv_j=uv_j,
        ray_i=pixel_rays(uv_i, intrinsics_i),
        ray_j=pixel_rays(uv_j, intrinsics_j),
        b_mu_i=si.mu,
        b_sig_i=si.sigma,
        b_mu_j=sj.mu,
        b_sig_j=sj.sigma,
    )


class BundleProblem:
    """Mutable optimization state for one scene.

    Holds per-frame pose increments (angles, trans), per-frame depth codes
    (betas), and one trust variable per match (u, flat across constraints in
    constraint order). Constraints are kept sorted by (j, i).
    """

    def __init__(self, n_frames: int, k: int, constraints, config: BundleConfig,
                 bases=None):
        if n_frames < 1:
            raise ValueError("need at least one frame")
        self.n_frames = n_frames
        self.k = k
        self.config = config
        self.bases = bases
        self.constraints = sorted(constraints, key=lambda c: (c.j, c.i))
        for c in self.constraints:
            if not (0 <= c.i < n_frames and 0 <= c.j < n_frames):
                raise ValueError("constraint frame index out of range")
            if c.b_sig_i.shape[1] != k or c.b_sig_j.shape[1] != k:
                raise ValueError("constraint basis rows disagree with K")
        self.angles = np.zeros((n_frames, 3))
        self.trans = np.zeros((n_frames, 3))
        self.betas = np.zeros((n_frames, k))
        counts = [len(c) for c in self.constraints]
        self.offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.intp)
        self.u = np.zeros(int(self.offsets[-1]))
        self.diagnostics: dict = {}
        self._build_caches()

    def _build_caches(self):
        cs = self.constraints
        if cs:
            self._ci = np.array([c.i for c in cs], dtype=np.intp)
            self._cj = np.array([c.j for c in cs], dtype=np.intp)
            self._r_rel = np.stack([c.relative_pose.rotation for c in cs])
            self._t_rel = np.stack([c.relative_pose.translation for c in cs])
            self._fi = np.repeat(self._ci, np.diff(self.offsets))
            self._fj = np.repeat(self._cj, np.diff(self.offsets))
            self._ray_i = np.concatenate([c.ray_i for c in cs])
            self._ray_j = np.concatenate([c.ray_j for c in cs])
            self._b_mu_i = np.concatenate([c.b_mu_i for c in cs])
            self._b_mu_j = np.concatenate([c.b_mu_j for c in cs])
            self._b_sig_i = np.concatenate([c.b_sig_i for c in cs])
            self._b_sig_j = np.concatenate([c.b_sig_j for c in cs])
        else:
            self._ci = self._cj = np.zeros(0, dtype=np.intp)
            self._r_rel = np.zeros((0, 3, 3))
            self._t_rel = np.zeros((0, 3))
            self._fi = self._fj = np.zeros(0, dtype=np.intp)
            self._ray_i = self._ray_j = np.zeros((0, 3))
            self._b_mu_i = self._b_mu_j = np.zeros(0)
            self._b_sig_i = self._b_sig_j = np.zeros((0, self.k))

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)

    def composed_poses(self):
        """Absolute rotations and translations from the current delta chain."""
        return compose_chain_arrays(self.angles, self.trans)

    def pose_list(self) -> list[RigidPose]:
        rw, tw = self.composed_poses()
        return [RigidPose(r, t) for r, t in zip(rw, tw)]

    def constraint_index(self, constraint) -> int:
        if isinstance(constraint, (int, np.integer)):
            return int(constraint)
        for idx, c in enumerate(self.constraints):
            if c is constraint:
                return idx
        raise ValueError("constraint not part of this problem")

    def state_dict(self) -> dict:
        return {
            "angles": self.angles.copy(),
            "trans": self.trans.copy(),
            "betas": self.betas.copy(),
            "u": self.u.copy(),
        }

    def load_state(self, state: dict):
        self.angles[:] = state["angles"]
        self.trans[:] = state["trans"]
        self.betas[:] = state["betas"]
        self.u[:] = state["u"]


def _match_terms(problem: BundleProblem, rw, tw, sl):
    """World-point residual pieces for the flat match slice ``sl``."""
    fi = problem._fi[sl]
    fj = problem._fj[sl]
    d_i = problem._b_mu_i[sl] + np.einsum(
        "mk,mk->m", problem._b_sig_i[sl], problem.betas[fi]
    )
    d_j = problem._b_mu_j[sl] + np.einsum(
        "mk,mk->m", problem._b_sig_j[sl], problem.betas[fj]
    )
    x_i = d_i[:, None] * problem._ray_i[sl]
    x_j = d_j[:, None] * problem._ray_j[sl]
    p_i = np.einsum("mab,mb->ma", rw[fi], x_i) + tw[fi]
    p_j = np.einsum("mab,mb->ma", rw[fj], x_j) + tw[fj]
    diff = p_i - p_j
    e = np.linalg.norm(diff, axis=1)
    return x_i, x_j, diff, e


def matches_loss(problem: BundleProblem, constraint) -> float:
    """Robust match term of a single constraint at the current state."""
    idx = problem.constraint_index(constraint)
    rw, tw = problem.composed_poses()
    sl = slice(int(problem.offsets[idx]), int(problem.offsets[idx + 1]))
    _, _, _, e = _match_terms(problem, rw, tw, sl)
    u = problem.u[sl]
    lam_u = problem.config.trust_regularizer
    return float(np.sum(expit(u) * e + lam_u * expit(-u)))


def pose_loss(problem: BundleProblem, constraint) -> float:
    """Pose-consistency term (elementwise L1) of a single constraint."""
    idx = problem.constraint_index(constraint)
    rw, tw = problem.composed_poses()
    c = problem.constraints[idx]
    a = rw[c.i] - rw[c.j] @ c.relative_pose.rotation
    v = tw[c.i] - rw[c.j] @ c.relative_pose.translation - tw[c.j]
    return float(np.sum(np.abs(a)) + np.sum(np.abs(v)))


@dataclass
class BundleGradient:
    angles: np.ndarray
    trans: np.ndarray
    betas: np.ndarray
    u: np.ndarray


def _chain_backprop(problem, rw, g_rw, g_tw):
    """Pull world-pose gradients back to the per-frame delta parameters."""
    n = problem.n_frames
    # translations: T_i = sum of deltas up to i, so delta k collects all i >= k
    g_trans = np.cumsum(g_tw[::-1], axis=0)[::-1]
    # rotations: suffix sums of G_i P_i^T sandwiched between prefix products
    gp = np.einsum("nab,ncb->nac", g_rw, rw)
    suffix = np.cumsum(gp[::-1], axis=0)[::-1]
    g_angles = np.zeros((n, 3))
    prev = np.eye(3)
    for kk in range(n):
        grad_local = prev.T @ suffix[kk] @ rw[kk]
        _, d_local = tait_bryan_derivatives(problem.angles[kk])
        g_angles[kk] = np.einsum("abc,bc->a", d_local, grad_local)
        prev = rw[kk]
    return g_angles, g_trans


def _loss_and_grad(problem: BundleProblem, n_active=None, include_matches=True,
                   want_grad=True):
    """Loss (and optionally gradient) over the first ``n_active`` constraints."""
    cfg = problem.config
    n_c = problem.n_constraints if n_active is None else int(n_active)
    rw, tw = problem.composed_poses()
    loss = 0.0
    g_rw = np.zeros_like(rw)
    g_tw = np.zeros_like(tw)
    g_betas = np.zeros_like(problem.betas)
    g_u = np.zeros_like(problem.u)

    if include_matches and n_c > 0:
        sl = slice(0, int(problem.offsets[n_c]))
        fi = problem._fi[sl]
        fj = problem._fj[sl]
        x_i, x_j, diff, e = _match_terms(problem, rw, tw, sl)
        u = problem.u[sl]
        s = expit(u)
        s_neg = expit(-u)
        lam_u = cfg.trust_regularizer
        loss += float(np.sum(s * e + lam_u * s_neg))
        if want_grad:
            g_u[sl] = s * s_neg * (e - lam_u)
            unit = np.zeros_like(diff)
            nz = e > COINCIDENT_TOL
            unit[nz] = diff[nz] / e[nz, None]
            g_p = s[:, None] * unit
            np.add.at(g_tw, fi, g_p)
            np.add.at(g_tw, fj, -g_p)
            np.add.at(g_rw, fi, np.einsum("ma,mb->mab", g_p, x_i))
            np.add.at(g_rw, fj, np.einsum("ma,mb->mab", -g_p, x_j))
            g_xi = np.einsum("mab,ma->mb", rw[fi], g_p)
            g_xj = np.einsum("mab,ma->mb", rw[fj], -g_p)
            g_di = np.einsum("mb,mb->m", g_xi, problem._ray_i[sl])
            g_dj = np.einsum("mb,mb->m", g_xj, problem._ray_j[sl])
            np.add.at(g_betas, fi, problem._b_sig_i[sl] * g_di[:, None])
            np.add.at(g_betas, fj, problem._b_sig_j[sl] * g_dj[:, None])

    if n_c > 0 and cfg.pose_term_weight != 0.0:
        w = cfg.pose_term_weight
        ci = problem._ci[:n_c]
        cj = problem._cj[:n_c]
        r_rel = problem._r_rel[:n_c]
        t_rel = problem._t_rel[:n_c]
        a = rw[ci] - np.einsum("cab,cbd->cad", rw[cj], r_rel)
        v = tw[ci] - np.einsum("cab,cb->ca", rw[cj], t_rel) - tw[cj]
        loss += float(w * (np.sum(np.abs(a)) + np.sum(np.abs(v))))
        if want_grad:
            # sign(0) = 0, with the coincidence floor absorbing float noise
            sa = w * np.where(np.abs(a) > COINCIDENT_TOL, np.sign(a), 0.0)
            sv = w * np.where(np.abs(v) > COINCIDENT_TOL, np.sign(v), 0.0)
            np.add.at(g_rw, ci, sa)
            np.add.at(g_rw, cj, -np.einsum("cab,cdb->cad", sa, r_rel))
            np.add.at(g_tw, ci, sv)
            np.add.at(g_tw, cj, -sv)
            np.add.at(g_rw, cj, -np.einsum("ca,cb->cab", sv, t_rel))

    if not want_grad:
        return loss, None
    g_angles, g_trans = _chain_backprop(problem, rw, g_rw, g_tw)
    return loss, BundleGradient(angles=g_angles, trans=g_trans, betas=g_betas, u=g_u)


def total_loss(problem: BundleProblem) -> float:
    loss, _ = _loss_and_grad(problem, want_grad=False)
    return loss


def total_loss_and_grad(problem: BundleProblem):
    """Full scene loss and its analytic gradient over all variable groups.

    The L1 subgradient uses sign(0) = 0, and the match residual direction is
    taken as zero for exactly coincident world points.
    """
    return _loss_and_grad(problem)


class _Adam:
    def __init__(self, shape, beta1, beta2, eps=1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0

    def update(self, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        mh = self.m / (1 - self.beta1**self.t)
        vh = self.v / (1 - self.beta2**self.t)
        return mh / (np.sqrt(vh) + self.eps)


def warmstart_active_count(t: int, n_constraints: int, ramp: int) -> int:
    """Constraints active at warm-start step t (1-based): min(ceil(t / ramp), C)."""
    return min(math.ceil(t / ramp), n_constraints)


def warmstart_poses(problem: BundleProblem) -> BundleProblem:
    """Incrementally fit the pose chain to the pairwise relative poses.

    Runs ``warmstart_budget_factor * |constraints|`` optimizer steps on the
    pose-consistency term alone, growing the active constraint prefix one
    constraint every ``warmstart_ramp`` steps. Depth codes and trust
    variables are untouched. The step size decays linearly to zero over the
    steps remaining after the prefix saturates, which damps the L1 jitter of
    the adaptive optimizer.
    """
    cfg = problem.config
    n_c = problem.n_constraints
    if n_c == 0:
        return problem
    budget = cfg.warmstart_budget_factor * n_c
    saturate = cfg.warmstart_ramp * n_c
    adam_a = _Adam(problem.angles.shape, cfg.beta1, cfg.beta2)
    adam_t = _Adam(problem.trans.shape, cfg.beta1, cfg.beta2)
    trace = []
    for t in range(1, budget + 1):
        active = warmstart_active_count(t, n_c, cfg.warmstart_ramp)
        loss, grad = _loss_and_grad(problem, n_active=active, include_matches=False)
        trace.append(loss)
        lr = cfg.step_size
        if budget > saturate and t > saturate:
            lr *= max(0.0, 1.0 - (t - saturate) / (budget - saturate))
        problem.angles -= lr * adam_a.update(grad.angles)
        problem.trans -= lr * adam_t.update(grad.trans)
    problem.diagnostics["warmstart_trace"] = trace
    return problem


def convergence_predicate(trace, window: int, tol: float) -> bool:
    """True when the mean loss of the last window stopped decreasing."""
    if len(trace) < 2 * window:
        return False
    last = float(np.mean(trace[-window:]))
    prev = float(np.mean(trace[-2 * window : -window]))
    return (prev - last) < tol * max(abs(prev), 1.0)


@dataclass
class BundleResult:
    problem: BundleProblem
    loss_trace: list
    poses: list
    dense_depths: list | None
    clamp_counts: list | None
    converged: bool
    iterations: int


def optimize_bundle(problem: BundleProblem) -> BundleResult:
    """Minimize the full scene loss over poses, codes, and trust variables.

    Adaptive-moment steps with decoupled weight decay applied only to the
    depth codes; the trust variables get a larger step (``u_step_scale``) so
    their logistic gates saturate within the iteration budget. Terminates
    when consecutive loss windows stop decreasing or at ``max_iterations``.
    A non-finite loss aborts with the offending state attached.
    """
    cfg = problem.config
    adam_a = _Adam(problem.angles.shape, cfg.beta1, cfg.beta2)
    adam_t = _Adam(problem.trans.shape, cfg.beta1, cfg.beta2)
    adam_b = _Adam(problem.betas.shape, cfg.beta1, cfg.beta2)
    adam_u = _Adam(problem.u.shape, cfg.beta1, cfg.beta2)
    trace = []
    converged = False
    for it in range(1, cfg.max_iterations + 1):
        loss, grad = _loss_and_grad(problem)
        if not np.isfinite(loss):
            err = RuntimeError(f"non-finite loss at iteration {it}")
            err.state = problem.state_dict()  # state dump for post-mortem
            raise err
        trace.append(loss)
        lr = cfg.step_size
        problem.angles -= lr * adam_a.update(grad.angles)
        problem.trans -= lr * adam_t.update(grad.trans)
        problem.betas -= lr * adam_b.update(grad.betas)
        problem.betas -= lr * cfg.beta_weight_decay * problem.betas
        problem.u -= lr * cfg.u_step_scale * adam_u.update(grad.u)
        if convergence_predicate(trace, cfg.convergence_window, cfg.convergence_tol):
            converged = True
            break
    problem.diagnostics["loss_trace"] = trace
    poses = problem.pose_list()
    dense = None
    clamps = None
    if problem.bases is not None:
        dense = []
        clamps = []
        for f, basis in enumerate(problem.bases):
            d = evaluate_dense(basis, problem.betas[f])
            bad = int(np.sum(d <= 0))
            if bad:
                d = np.maximum(d, cfg.depth_floor)
            dense.append(d)
            clamps.append(bad)
        total_bad = sum(clamps)
        if total_bad:
            logger.warning(
                "clamped %d nonpositive depth values to %.3f m", total_bad, cfg.depth_floor
            )
    return BundleResult(
        problem=problem,
        loss_trace=trace,
        poses=poses,
        dense_depths=dense,
        clamp_counts=clamps,
        converged=converged,
        iterations=len(trace),
    )


def propose_pairs(n_frames: int, window: int = 10, n_random: int = 2, seed: int = 0):
    """Candidate image pairs: a sliding window plus random long-range links.

    Returns (i, j) tuples with i < j, deduplicated and sorted by (j, i).
    """
    rng = np.random.default_rng(seed)
    pairs = set()
    for i in range(n_frames):
        for j in range(i + 1, min(i + window + 1, n_frames)):
            pairs.add((i, j))
        far = np.arange(i + window + 1, n_frames)
        if far.size and n_random > 0:
            chosen = rng.choice(far, size=min(n_random, far.size), replace=False)
            for j in np.sort(chosen):
                pairs.add((i, int(j)))
    return sorted(pairs, key=lambda p: (p[1], p[0]))
