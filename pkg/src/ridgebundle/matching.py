"""Descriptor matching and epipolar outlier rejection.

Builds weakly verified match sets: mutual nearest-neighbor pairing with a
crosscheck, followed by least-median-of-squares filtering against a
fundamental matrix fitted with the normalized eight-point solver.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

# LMedS internals. The robust scale follows the classical recipe
# (1.4826 * sqrt(median squared residual), inliers within 2.5 sigma); the
# scale is floored so exactly-consistent synthetic data keeps all matches.
LMEDS_SAMPLES = 512
LMEDS_SCALE_FACTOR = 1.4826
LMEDS_INLIER_SIGMA = 2.5
LMEDS_MIN_SCALE_PX = 1e-4

DEGENERACY_RTOL = 1e-9


class DegenerateConfiguration(ValueError):
    """Raised when a geometric estimate has no unique solution."""


@dataclass
class KeypointSet:
    """Keypoint pixel locations with unit-norm descriptors.

    pixels: (N, 2) subpixel (u, v) coordinates.
    descriptors: (N, D); rows are re-normalized to unit length on construction.
    """

    pixels: np.ndarray
    descriptors: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        self.descriptors = np.asarray(self.descriptors, dtype=np.float64)
        if self.pixels.ndim != 2 or self.pixels.shape[1] != 2:
            raise ValueError("pixels must be (N, 2)")
        if self.descriptors.ndim != 2 or self.descriptors.shape[0] != self.pixels.shape[0]:
            raise ValueError("descriptor rows must match pixel count")
        if not np.all(np.isfinite(self.pixels)) or not np.all(np.isfinite(self.descriptors)):
            raise ValueError("keypoint data must be finite")
        norms = np.linalg.norm(self.descriptors, axis=1)
        if np.any(norms == 0):
            raise ValueError("descriptors must be nonzero")
        # normalize non-unit rows only, so already-normalized data is untouched
        off = np.abs(norms - 1.0) > 1e-12
        if np.any(off):
            self.descriptors = self.descriptors.copy()
            self.descriptors[off] /= norms[off, None]

    def __len__(self) -> int:
        return self.pixels.shape[0]


@dataclass
class MatchSet:
    """Index pairs between two frames' keypoint sets."""

    pairs: np.ndarray
    frame_a: int = 0
    frame_b: int = 1

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.intp).reshape(-1, 2)
        if self.pairs.size and np.any(self.pairs < 0):
            raise ValueError("match indices must be nonnegative")
        if self.pairs.shape[0] != np.unique(self.pairs, axis=0).shape[0]:
            raise ValueError("duplicate match pair")

    def __len__(self) -> int:
        return self.pairs.shape[0]

    def subset(self, idx) -> "MatchSet":
        idx = np.asarray(idx)
        if idx.dtype != bool:
            idx = idx.astype(np.intp)
        return MatchSet(self.pairs[idx], self.frame_a, self.frame_b)


def mutual_nn_match(a: KeypointSet, b: KeypointSet, k: int = 1) -> MatchSet:
    """Mutual nearest-neighbor matches between two descriptor sets.

    A pair (m, n) is kept iff n is among m's k nearest descriptors in b AND m
    is among n's k nearest in a (Euclidean distance; ties broken toward the
    lowest index). The default k=1 is the plain crosscheck.
    """
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both keypoint sets must be nonempty")
    if k < 1:
        raise ValueError("k must be >= 1")
    # Unit-norm rows make squared distance 2 - 2 * dot; the dot matrix keeps
    # exact ties exact, which the ordering below relies on.
    dots = a.descriptors @ b.descriptors.T
    d2 = 2.0 - 2.0 * dots
    if k == 1:
        nn_b = np.argmin(d2, axis=1)
        nn_a = np.argmin(d2, axis=0)
        rows = np.arange(len(a))
        keep = nn_a[nn_b[rows]] == rows
        pairs = np.stack([rows[keep], nn_b[keep]], axis=1)
        return MatchSet(pairs)
    kk_b = min(k, len(b))
    kk_a = min(k, len(a))
    near_b = np.argsort(d2, axis=1, kind="stable")[:, :kk_b]
    near_a = np.argsort(d2.T, axis=1, kind="stable")[:, :kk_a]
    in_a = np.zeros((len(b), len(a)), dtype=bool)
    np.put_along_axis(in_a, near_a, True, axis=1)
    pairs = [
        (m, n)
        for m in range(len(a))
        for n in near_b[m]
        if in_a[n, m]
    ]
    return MatchSet(np.array(pairs, dtype=np.intp).reshape(-1, 2))


def _hartley_normalization_batch(pts: np.ndarray) -> np.ndarray:
    """Per-batch conditioning transforms: centroid to origin, mean norm sqrt(2)."""
    centroid = pts.mean(axis=1, keepdims=True)
    dist = np.linalg.norm(pts - centroid, axis=2).mean(axis=1)
    scale = np.where(dist > 0, np.sqrt(2.0) / np.maximum(dist, 1e-300), 1.0)
    b = pts.shape[0]
    t = np.zeros((b, 3, 3))
    t[:, 0, 0] = scale
    t[:, 1, 1] = scale
    t[:, 2, 2] = 1.0
    t[:, 0, 2] = -scale * centroid[:, 0, 0]
    t[:, 1, 2] = -scale * centroid[:, 0, 1]
    return t


def _eight_point_batch(pts_a: np.ndarray, pts_b: np.ndarray):
    """Batched normalized eight-point solve.

    pts_a/pts_b: (B, M, 2). Returns (F, ok): F (B, 3, 3) rank-2 with unit
    Frobenius norm, ok a boolean mask that is False where the configuration
    leaves the algebraic nullspace multi-dimensional (coincident or collinear
    points).
    """
    b, m = pts_a.shape[:2]
    ta = _hartley_normalization_batch(pts_a)
    tb = _hartley_normalization_batch(pts_b)
    ones = np.ones((b, m, 1))
    na = np.concatenate([pts_a, ones], axis=2) @ ta.transpose(0, 2, 1)
    nb = np.concatenate([pts_b, ones], axis=2) @ tb.transpose(0, 2, 1)
    design = np.empty((b, m, 9))
    design[:, :, 0] = nb[:, :, 0] * na[:, :, 0]
    design[:, :, 1] = nb[:, :, 0] * na[:, :, 1]
    design[:, :, 2] = nb[:, :, 0]
    design[:, :, 3] = nb[:, :, 1] * na[:, :, 0]
    design[:, :, 4] = nb[:, :, 1] * na[:, :, 1]
    design[:, :, 5] = nb[:, :, 1]
    design[:, :, 6] = na[:, :, 0]
    design[:, :, 7] = na[:, :, 1]
    design[:, :, 8] = 1.0
    _, s, vt = np.linalg.svd(design, full_matrices=True)
    # a unique nullspace direction needs rank 8
    ok = s[:, 7] > DEGENERACY_RTOL * np.maximum(s[:, 0], 1.0)
    f_norm = vt[:, -1, :].reshape(b, 3, 3)
    u, sv, vt2 = np.linalg.svd(f_norm)
    sv = sv.copy()
    sv[:, 2] = 0.0
    f_norm = (u * sv[:, None, :]) @ vt2
    f = tb.transpose(0, 2, 1) @ f_norm @ ta
    norm = np.linalg.norm(f, axis=(1, 2))
    f = f / np.maximum(norm, 1e-300)[:, None, None]
    return f, ok


def eight_point_fundamental(pts_a: np.ndarray, pts_b: np.ndarray) -> np.ndarray:
    """Normalized eight-point fundamental matrix from >= 8 correspondences.

    Returns the rank-2, unit-Frobenius-norm F with pts_b' F pts_a ~ 0.
    Degenerate configurations (coincident sets, collinear points) leave the
    algebraic nullspace multi-dimensional and raise DegenerateConfiguration.
    """
    pts_a = np.asarray(pts_a, dtype=np.float64)
    pts_b = np.asarray(pts_b, dtype=np.float64)
    if pts_a.shape != pts_b.shape or pts_a.ndim != 2 or pts_a.shape[1] != 2:
        raise ValueError("need matching (M, 2) point arrays")
    if pts_a.shape[0] < 8:
        raise ValueError("need at least 8 correspondences")
    f, ok = _eight_point_batch(pts_a[None], pts_b[None])
    if not ok[0]:
        raise DegenerateConfiguration(
            "correspondences are degenerate (coincident or collinear)"
        )
    return f[0]


def sampson_sq(f: np.ndarray, pts_a: np.ndarray, pts_b: np.ndarray) -> np.ndarray:
    """First-order squared epipolar distance (px^2) per correspondence."""
    pts_a = np.asarray(pts_a, dtype=np.float64)
    pts_b = np.asarray(pts_b, dtype=np.float64)
    ones = np.ones((pts_a.shape[0], 1))
    xa = np.hstack([pts_a, ones])
    xb = np.hstack([pts_b, ones])
    la = xa @ f.T  # epipolar lines in image b
    lb = xb @ f  # epipolar lines in image a
    num = np.einsum("ij,ij->i", xb, la) ** 2
    den = la[:, 0] ** 2 + la[:, 1] ** 2 + lb[:, 0] ** 2 + lb[:, 1] ** 2
    return num / np.maximum(den, np.finfo(np.float64).tiny)


def lmeds_verify(
    matches: MatchSet,
    a: KeypointSet,
    b: KeypointSet,
    seed: int = 0,
    n_samples: int = LMEDS_SAMPLES,
) -> MatchSet:
    """LMedS epipolar filtering of a match set.

    Draws fixed-count random 8-point samples, scores each fundamental matrix
    by the median squared Sampson distance, keeps the minimizer, and accepts
    matches within 2.5 robust standard deviations. Deterministic given seed.
    Fewer than 8 matches cannot be verified: they pass through with a
    RuntimeWarning.
    """
    m = len(matches)
    if m < 8:
        warnings.warn(
            f"only {m} matches; epipolar verification skipped", RuntimeWarning
        )
        return matches
    pts_a = a.pixels[matches.pairs[:, 0]]
    pts_b = b.pixels[matches.pairs[:, 1]]
    rng = np.random.default_rng(seed)
    samples = np.argsort(rng.random((n_samples, m)), axis=1, kind="stable")[:, :8]
    f_all, ok = _eight_point_batch(pts_a[samples], pts_b[samples])
    if not np.any(ok):
        warnings.warn("all LMedS samples degenerate; verification skipped", RuntimeWarning)
        return matches
    ones = np.ones((m, 1))
    xa = np.hstack([pts_a, ones])
    xb = np.hstack([pts_b, ones])
    la = np.einsum("bij,mj->bmi", f_all, xa)
    lb = np.einsum("bji,mj->bmi", f_all, xb)
    num = np.einsum("mi,bmi->bm", xb, la) ** 2
    den = la[:, :, 0] ** 2 + la[:, :, 1] ** 2 + lb[:, :, 0] ** 2 + lb[:, :, 1] ** 2
    dist = num / np.maximum(den, np.finfo(np.float64).tiny)
    medians = np.where(ok, np.median(dist, axis=1), np.inf)
    best = int(np.argmin(medians))
    scale = max(LMEDS_SCALE_FACTOR * np.sqrt(medians[best]), LMEDS_MIN_SCALE_PX)
    keep = dist[best] < (LMEDS_INLIER_SIGMA * scale) ** 2
    return matches.subset(np.flatnonzero(keep))
