"""Linear depth-map parametrization and its closed-form ridge fit.

A frame's dense depth is ``D(code) = mu + sum_k code[k] * sigma[k]`` where
``mu`` is a mean-depth plane and ``sigma`` holds K factor-of-variation planes,
all stored at a coarse basis resolution. Keypoint consumers sample the planes
bilinearly, which keeps sampled depth linear in the code and lets the sparse
solvers below stay closed-form.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass
class DepthBasis:
    """Mean plane plus K factor planes at basis resolution.

    mu: (H_b, W_b) positive depths in meters.
    sigma: (K, H_b, W_b) factor planes (meters per unit coefficient).
    frame_width/frame_height: full image resolution the basis maps onto.
    Basis planes may arrive in single precision from disk; they are promoted
    to float64 here so every downstream solve runs in double.
    """

    mu: np.ndarray
    sigma: np.ndarray
    frame_width: int
    frame_height: int

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.mu.ndim != 2:
            raise ValueError("mu must be a 2-D plane")
        if self.sigma.ndim != 3 or self.sigma.shape[1:] != self.mu.shape:
            raise ValueError("sigma must be (K, H_b, W_b) matching mu")
        if self.sigma.shape[0] < 1:
            raise ValueError("need at least one factor plane")
        if not np.all(np.isfinite(self.mu)) or not np.all(np.isfinite(self.sigma)):
            raise ValueError("basis planes must be finite")
        if np.any(self.mu <= 0):
            raise ValueError("all mean-depth entries must be positive")
        if self.frame_width < 1 or self.frame_height < 1:
            raise ValueError("frame resolution must be positive")

    @property
    def k(self) -> int:
        return self.sigma.shape[0]

    @property
    def basis_height(self) -> int:
        return self.mu.shape[0]

    @property
    def basis_width(self) -> int:
        return self.mu.shape[1]


class SampledBasis(NamedTuple):
    """Per-keypoint basis samples: means (M,) and factor rows (M, K)."""

    mu: np.ndarray
    sigma: np.ndarray


def grid_coords(basis: DepthBasis, uv: np.ndarray) -> np.ndarray:
    """Map frame pixel coordinates to (fractional) basis-grid coordinates.

    Frame corners map to grid corners: gx = u * (W_b - 1) / (W - 1), and
    likewise for rows. Single-column or single-row planes map to coordinate 0.
    """
    uv = np.asarray(uv, dtype=np.float64)
    out = np.empty_like(uv)
    sx = (basis.basis_width - 1) / (basis.frame_width - 1) if basis.frame_width > 1 else 0.0
    sy = (basis.basis_height - 1) / (basis.frame_height - 1) if basis.frame_height > 1 else 0.0
    out[:, 0] = uv[:, 0] * sx
    out[:, 1] = uv[:, 1] * sy
    return out


def node_pixels(basis: DepthBasis) -> np.ndarray:
    """Frame pixel coordinates of every basis-grid node, row-major (H_b*W_b, 2)."""
    sx = (basis.frame_width - 1) / (basis.basis_width - 1) if basis.basis_width > 1 else 0.0
    sy = (basis.frame_height - 1) / (basis.basis_height - 1) if basis.basis_height > 1 else 0.0
    gx, gy = np.meshgrid(np.arange(basis.basis_width), np.arange(basis.basis_height))
    return np.stack([gx.ravel() * sx, gy.ravel() * sy], axis=1)


def bilinear_sample(planes: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of one plane (H, W) or a stack (C, H, W).

    gx/gy are fractional grid coordinates, expected within the grid bounds.
    Returns (M,) for a single plane or (M, C) for a stack.
    """
    planes = np.asarray(planes, dtype=np.float64)
    single = planes.ndim == 2
    stack = planes[None] if single else planes
    h, w = stack.shape[1:]
    ix = np.clip(np.floor(gx).astype(np.intp), 0, max(w - 2, 0))
    iy = np.clip(np.floor(gy).astype(np.intp), 0, max(h - 2, 0))
    fx = gx - ix
    fy = gy - iy
    ix1 = np.minimum(ix + 1, w - 1)
    iy1 = np.minimum(iy + 1, h - 1)
    v00 = stack[:, iy, ix]
    v01 = stack[:, iy, ix1]
    v10 = stack[:, iy1, ix]
    v11 = stack[:, iy1, ix1]
    vals = (
        v00 * (1 - fy) * (1 - fx)
        + v01 * (1 - fy) * fx
        + v10 * fy * (1 - fx)
        + v11 * fy * fx
    )
    return vals[0] if single else vals.T


def sample_at(basis: DepthBasis, pixels: np.ndarray) -> SampledBasis:
    """Sample mean and factor planes at subpixel frame locations.

    pixels: (M, 2) frame coordinates, all inside [0, W) x [0, H).
    Sampling is bilinear after rescaling to the basis grid, so the sampled
    value stays linear in the plane values (and hence in the depth code).
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2 or pixels.shape[1] != 2:
        raise ValueError("pixels must be an (M, 2) array")
    in_x = (pixels[:, 0] >= 0) & (pixels[:, 0] < basis.frame_width)
    in_y = (pixels[:, 1] >= 0) & (pixels[:, 1] < basis.frame_height)
    if not np.all(in_x & in_y):
        bad = int(np.flatnonzero(~(in_x & in_y))[0])
        raise ValueError(
            f"pixel {bad} at {tuple(pixels[bad])} lies outside the "
            f"{basis.frame_width}x{basis.frame_height} frame"
        )
    g = grid_coords(basis, pixels)
    mu = bilinear_sample(basis.mu, g[:, 0], g[:, 1])
    sig = bilinear_sample(basis.sigma, g[:, 0], g[:, 1])
    return SampledBasis(mu=mu, sigma=sig)


def evaluate_dense(basis: DepthBasis, code: np.ndarray) -> np.ndarray:
    """Dense depth map mu + sum_k code[k] * sigma[k], shape (H_b, W_b)."""
    code = np.asarray(code, dtype=np.float64)
    if code.shape != (basis.k,):
        raise ValueError(f"code must have length K={basis.k}, got shape {code.shape}")
    return basis.mu + np.tensordot(code, basis.sigma, axes=1)


def ridge_fit(basis: DepthBasis, target: np.ndarray, lam: float) -> np.ndarray:
    """Closed-form ridge code fitting a dense target depth map.

    Solves min_b ||mu + sigma.b - target||^2 + lam * ||b||^2 via the K x K
    regularized normal equations; lam > 0 guarantees a unique solution.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.shape != basis.mu.shape:
        raise ValueError("target resolution must equal the basis resolution")
    if not lam > 0:
        raise ValueError("ridge parameter must be positive")
    a = basis.sigma.reshape(basis.k, -1).T
    r = (target - basis.mu).ravel()
    gram = a.T @ a + lam * np.eye(basis.k)
    return np.linalg.solve(gram, a.T @ r)


def row_variance(basis: DepthBasis) -> np.ndarray:
    """Sample variance of each factor plane over its pixels (denominator n - 1)."""
    flat = basis.sigma.reshape(basis.k, -1)
    if flat.shape[1] < 2:
        raise ValueError("row variance needs at least two pixels per plane")
    return flat.var(axis=1, ddof=1)


class DepthLossBreakdown(NamedTuple):
    total: float
    mean_fit: float
    corrected_fit: float
    code_penalty: float
    row_variance_penalty: float
    code: np.ndarray


def depth_training_loss(
    basis: DepthBasis,
    target: np.ndarray,
    lam: float,
    squared_second_term: bool = False,
    reduction: str = "sum",
) -> DepthLossBreakdown:
    """Diagnostic loss of a basis against a dense target depth map.

    Components: squared mean-plane error, the (by default unsquared) norm of
    the ridge-corrected residual, the ridge penalty on the fitted code, and
    the L1 deviation of the factor-plane sample variances from one.
    ``reduction`` selects sum (default) or mean aggregation over pixels for
    the two fit terms; the code and variance terms are K-dimensional and
    unaffected.
    """
    if reduction not in ("sum", "mean"):
        raise ValueError("reduction must be 'sum' or 'mean'")
    target = np.asarray(target, dtype=np.float64)
    code = ridge_fit(basis, target, lam)
    n_px = target.size
    mean_resid = basis.mu - target
    corrected_resid = evaluate_dense(basis, code) - target
    mean_fit = float(np.sum(mean_resid**2))
    corrected_sq = float(np.sum(corrected_resid**2))
    if reduction == "mean":
        mean_fit /= n_px
        corrected_sq /= n_px
    corrected_fit = corrected_sq if squared_second_term else float(np.sqrt(corrected_sq))
    code_penalty = float(lam * np.sum(code**2))
    row_var_penalty = float(np.sum(np.abs(row_variance(basis) - 1.0)))
    total = mean_fit + corrected_fit + code_penalty + row_var_penalty
    return DepthLossBreakdown(
        total=total,
        mean_fit=mean_fit,
        corrected_fit=corrected_fit,
        code_penalty=code_penalty,
        row_variance_penalty=row_var_penalty,
        code=code,
    )
