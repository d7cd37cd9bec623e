"""Camera models, rigid poses, and the projection / back-projection algebra.

Conventions used throughout the package:

* Pixel coordinates are (u, v) = (column, row), subpixel, with the origin at
  the top-left pixel center.
* A camera-frame point x maps to world coordinates as ``x_w = R @ x + T``.
* Relative pose (R_ab, T_ab) between frames a and b maps frame-a camera
  coordinates into frame-b camera coordinates: ``x_b = R_ab @ x_a + T_ab``.
* Incremental rotations are Tait-Bryan angles (alpha, beta, gamma) about the
  camera x, y, z axes, composed as ``Rz(gamma) @ Ry(beta) @ Rx(alpha)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ORTHONORMAL_TOL = 1e-9


def _as_float_array(x, shape, name):
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass
class Intrinsics:
    """Pinhole calibration: focal lengths, principal point, image size (pixels)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie strictly inside the image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass
class RigidPose:
    """Rotation + translation, validated orthonormal with det +1."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = _as_float_array(self.rotation, (3, 3), "rotation")
        self.translation = _as_float_array(self.translation, (3,), "translation")
        err = self.rotation.T @ self.rotation - np.eye(3)
        if np.abs(err).max() > ORTHONORMAL_TOL:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(self.rotation) - 1.0) > ORTHONORMAL_TOL:
            raise ValueError("rotation determinant differs from +1")

    @staticmethod
    def identity() -> "RigidPose":
        return RigidPose(np.eye(3), np.zeros(3))

    def inverse(self) -> "RigidPose":
        rt = self.rotation.T
        return RigidPose(rt, -rt @ self.translation)


@dataclass
class TaitBryanDelta:
    """Incremental rotation (Tait-Bryan angles, radians) and translation step."""

    angles: np.ndarray
    translation_delta: np.ndarray

    def __post_init__(self):
        self.angles = _as_float_array(self.angles, (3,), "angles")
        self.translation_delta = _as_float_array(
            self.translation_delta, (3,), "translation_delta"
        )
        if np.abs(self.angles).max() >= math.pi:
            raise ValueError("Tait-Bryan angles must satisfy |angle| < pi")


@dataclass
class Pixel:
    """Subpixel image location (u = column, v = row)."""

    u: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise ValueError("pixel coordinates must be finite")


def pixel_ray(p: Pixel, k: Intrinsics) -> np.ndarray:
    """Unnormalized viewing ray through p with unit z: K^-1 [u, v, 1]."""
    return np.array([(p.u - k.cx) / k.fx, (p.v - k.cy) / k.fy, 1.0])


def pixel_rays(uv: np.ndarray, k: Intrinsics) -> np.ndarray:
    """Viewing rays for an (N, 2) array of pixel coordinates, unit z. (N, 3)."""
    uv = np.asarray(uv, dtype=np.float64)
    rays = np.empty((uv.shape[0], 3))
    rays[:, 0] = (uv[:, 0] - k.cx) / k.fx
    rays[:, 1] = (uv[:, 1] - k.cy) / k.fy
    rays[:, 2] = 1.0
    return rays


def backproject(p: Pixel, depth: float, k: Intrinsics) -> np.ndarray:
    """Lift a pixel at the given depth (meters) into camera coordinates.

    The returned point has z equal to ``depth`` and reprojects exactly to p.
    Raises ValueError for nonpositive depth.
    """
    if not depth > 0:
        raise ValueError(f"depth must be positive, got {depth}")
    return depth * pixel_ray(p, k)


def backproject_many(uv: np.ndarray, depths: np.ndarray, k: Intrinsics) -> np.ndarray:
    """Vectorized backprojection of (N, 2) pixels with (N,) depths."""
    depths = np.asarray(depths, dtype=np.float64)
    if np.any(depths <= 0):
        raise ValueError("all depths must be positive")
    return depths[:, None] * pixel_rays(uv, k)


def project(x: np.ndarray, k: Intrinsics) -> np.ndarray:
    """Project camera-frame points (z > 0) to pixel coordinates.

    Accepts a single (3,) point or an (N, 3) array; returns matching (2,) or
    (N, 2) pixel coordinates.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if np.any(pts[:, 2] <= 0):
        raise ValueError("points must lie in front of the camera (z > 0)")
    uv = np.empty((pts.shape[0], 2))
    uv[:, 0] = k.fx * pts[:, 0] / pts[:, 2] + k.cx
    uv[:, 1] = k.fy * pts[:, 1] / pts[:, 2] + k.cy
    return uv[0] if single else uv


def cam_to_world(x: np.ndarray, pose: RigidPose) -> np.ndarray:
    """Map a camera-frame point to world coordinates: R @ x + T."""
    return pose.rotation @ np.asarray(x, dtype=np.float64) + pose.translation


def world_to_cam(x: np.ndarray, pose: RigidPose) -> np.ndarray:
    """Inverse of cam_to_world for the same pose."""
    return pose.rotation.T @ (np.asarray(x, dtype=np.float64) - pose.translation)


def transform_points(points: np.ndarray, pose: RigidPose) -> np.ndarray:
    """Apply cam_to_world to an (N, 3) array of points."""
    return np.asarray(points, dtype=np.float64) @ pose.rotation.T + pose.translation


def relative_pose(pose_a: RigidPose, pose_b: RigidPose) -> RigidPose:
    """Pose mapping frame-a camera coordinates into frame-b camera coordinates."""
    r = pose_b.rotation.T @ pose_a.rotation
    t = pose_b.rotation.T @ (pose_a.translation - pose_b.translation)
    return RigidPose(r, t)


def _axis_rotations(angles):
    ax, ay, az = angles
    ca, sa = math.cos(ax), math.sin(ax)
    cb, sb = math.cos(ay), math.sin(ay)
    cc, sc = math.cos(az), math.sin(az)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]])
    ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    rz = np.array([[cc, -sc, 0.0], [sc, cc, 0.0], [0.0, 0.0, 1.0]])
    return rx, ry, rz


def tait_bryan_to_rotation(angles: np.ndarray) -> np.ndarray:
    """Rotation matrix Rz(gamma) @ Ry(beta) @ Rx(alpha) for angles (alpha, beta, gamma)."""
    angles = _as_float_array(angles, (3,), "angles")
    rx, ry, rz = _axis_rotations(angles)
    return rz @ ry @ rx


def tait_bryan_derivatives(angles: np.ndarray):
    """Rotation matrix and its three partial derivatives w.r.t. the angles.

    Returns (R, dR) with dR of shape (3, 3, 3); dR[a] is the derivative of R
    with respect to angles[a].
    """
    angles = _as_float_array(angles, (3,), "angles")
    ax, ay, az = angles
    rx, ry, rz = _axis_rotations(angles)
    ca, sa = math.cos(ax), math.sin(ax)
    cb, sb = math.cos(ay), math.sin(ay)
    cc, sc = math.cos(az), math.sin(az)
    drx = np.array([[0.0, 0.0, 0.0], [0.0, -sa, -ca], [0.0, ca, -sa]])
    dry = np.array([[-sb, 0.0, cb], [0.0, 0.0, 0.0], [-cb, 0.0, -sb]])
    drz = np.array([[-sc, -cc, 0.0], [cc, -sc, 0.0], [0.0, 0.0, 0.0]])
    rot = rz @ ry @ rx
    d = np.empty((3, 3, 3))
    d[0] = rz @ ry @ drx
    d[1] = rz @ dry @ rx
    d[2] = drz @ ry @ rx
    return rot, d


def compose_chain_arrays(angles: np.ndarray, translation_deltas: np.ndarray):
    """Cumulative composition of per-frame increments, array form.

    rotations[i] = R(angles[0]) @ ... @ R(angles[i]);
    translations[i] = sum of translation_deltas[:i + 1].
    """
    angles = np.asarray(angles, dtype=np.float64)
    translation_deltas = np.asarray(translation_deltas, dtype=np.float64)
    n = angles.shape[0]
    if n == 0:
        raise ValueError("delta sequence must be nonempty")
    rotations = np.empty((n, 3, 3))
    acc = np.eye(3)
    for i in range(n):
        acc = acc @ tait_bryan_to_rotation(angles[i])
        rotations[i] = acc
    translations = np.cumsum(translation_deltas, axis=0)
    return rotations, translations


def compose_chain(deltas) -> list[RigidPose]:
    """Compose a sequence of TaitBryanDelta into absolute poses."""
    deltas = list(deltas)
    if not deltas:
        raise ValueError("delta sequence must be nonempty")
    angles = np.stack([d.angles for d in deltas])
    trans = np.stack([d.translation_delta for d in deltas])
    rotations, translations = compose_chain_arrays(angles, trans)
    return [RigidPose(r, t) for r, t in zip(rotations, translations)]


def rotation_angle_deg(ra: np.ndarray, rb: np.ndarray) -> float:
    """Geodesic angle between two rotations, in degrees, clamped to [0, 180].

    The arccos argument is clamped to [-1, 1] to absorb floating-point drift.
    """
    ra = np.asarray(ra, dtype=np.float64)
    rb = np.asarray(rb, dtype=np.float64)
    c = (np.trace(ra.T @ rb) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))
