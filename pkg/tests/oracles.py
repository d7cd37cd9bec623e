"""Independent reference implementations used as test oracles.

Everything here is deliberately written the slow, obvious way (loops, naive
formulas, plain gradient descent) and never calls the code paths it checks.
"""

import numpy as np
from scipy.spatial.transform import Rotation


def random_rotation(rng) -> np.ndarray:
    return Rotation.random(random_state=np.random.RandomState(rng.integers(2**31))).as_matrix()


def quaternion_angle_deg(ra, rb) -> float:
    """Rotation angle between two matrices via the quaternion magnitude."""
    rel = Rotation.from_matrix(np.asarray(ra).T @ np.asarray(rb))
    return float(np.degrees(rel.magnitude()))


def bilinear_reference(plane, gx, gy) -> float:
    """Direct 4-tap bilinear interpolation at one fractional grid location."""
    h, w = plane.shape
    ix = min(max(int(np.floor(gx)), 0), w - 2)
    iy = min(max(int(np.floor(gy)), 0), h - 2)
    fx = gx - ix
    fy = gy - iy
    return (
        plane[iy, ix] * (1 - fy) * (1 - fx)
        + plane[iy, ix + 1] * (1 - fy) * fx
        + plane[iy + 1, ix] * fy * (1 - fx)
        + plane[iy + 1, ix + 1] * fy * fx
    )


def brute_force_mutual_nn(desc_a, desc_b):
    """O(N^2) mutual nearest neighbors with lowest-index tie-breaks."""
    pairs = []
    na, nb = len(desc_a), len(desc_b)
    d = np.empty((na, nb))
    for m in range(na):
        for n in range(nb):
            d[m, n] = np.sum((desc_a[m] - desc_b[n]) ** 2)
    for m in range(na):
        n = int(np.argmin(d[m]))
        if int(np.argmin(d[:, n])) == m:
            pairs.append((m, n))
    return pairs


def gd_ridge_objective(a, r, lam, steps=10_000):
    """Objective reached by plain gradient descent on the ridge problem.

    Minimizes ||a @ beta - r||^2 + lam * ||beta||^2 starting from zero, with a
    fixed step below the curvature bound. The Gram matrix is precomputed only
    to make each of the (many) identical steps cheap; the iteration itself is
    textbook gradient descent, no linear solve involved.
    """
    gram = a.T @ a
    atr = a.T @ r
    lip = 2.0 * (np.linalg.eigvalsh(gram).max() + lam)
    step = 1.0 / lip
    beta = np.zeros(a.shape[1])
    for _ in range(steps):
        grad = 2.0 * (gram @ beta + lam * beta - atr)
        beta = beta - step * grad
    resid = a @ beta - r
    return float(resid @ resid + lam * beta @ beta), beta


def gd_quadratic_objective(g, h, lam, steps=10_000):
    """Gradient descent on ||g @ theta + h||^2 + lam * ||theta||^2 from zero."""
    gram = g.T @ g
    gth = g.T @ h
    lip = 2.0 * (np.linalg.eigvalsh(gram).max() + lam)
    step = 1.0 / lip
    theta = np.zeros(g.shape[1])
    for _ in range(steps):
        grad = 2.0 * (gram @ theta + gth + lam * theta)
        theta = theta - step * grad
    resid = g @ theta + h
    return float(resid @ resid + lam * theta @ theta), theta


def pairwise_objective(pose, code_i, code_j, ray_i, ray_j, b_mu_i, b_sig_i,
                       b_mu_j, b_sig_j, lam):
    """Naive per-match evaluation of the pairwise alignment objective."""
    total = 0.0
    for m in range(ray_i.shape[0]):
        di = b_mu_i[m] + b_sig_i[m] @ code_i
        dj = b_mu_j[m] + b_sig_j[m] @ code_j
        xi = di * ray_i[m]
        xj = dj * ray_j[m]
        resid = pose.rotation @ xi + pose.translation - xj
        total += float(resid @ resid)
    return total + lam * (float(code_i @ code_i) + float(code_j @ code_j))
