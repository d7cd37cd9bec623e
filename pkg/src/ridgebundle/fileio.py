"""On-disk formats: depth bases, keypoints, matches, trajectories, codes, PLY.

Bases are binary (size); keypoints, matches, trajectories, and codes are ASCII
(diffable). Every store/load pair round-trips losslessly at the stored
precision: float32 payloads bit-exactly, ASCII floats via repr-precision
formatting. Loaders validate strictly and raise a distinct error kind per
failure mode with file/offset context in the message.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .depthbasis import DepthBasis, node_pixels
from .geometry import Intrinsics, RigidPose, pixel_rays
from .matching import KeypointSet, MatchSet

BASIS_MAGIC = b"RSFMB1"
KEYPOINT_MAGIC = "RSFMK1"
MATCH_MAGIC = "RSFMM1"
CODE_MAGIC = "RSFMC1"
QUAT_NORM_TOL = 1e-6


class FileFormatError(ValueError):
    """Base class for malformed pipeline files."""


class BadMagicError(FileFormatError):
    pass


class TruncatedPayloadError(FileFormatError):
    pass


class NonFiniteValueError(FileFormatError):
    pass


class RangeViolationError(FileFormatError):
    pass


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# depth basis (binary)

def store_basis(path, basis: DepthBasis) -> None:
    path = Path(path)
    h, w, k = basis.basis_height, basis.basis_width, basis.k
    header = BASIS_MAGIC + struct.pack(
        "<5I", h, w, k, basis.frame_height, basis.frame_width
    )
    payload = np.concatenate(
        [basis.mu.astype(np.float32).ravel(), basis.sigma.astype(np.float32).ravel()]
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def load_basis(path) -> DepthBasis:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 26:
        raise TruncatedPayloadError(f"{path}: header needs 26 bytes, file has {len(raw)}")
    if raw[:6] != BASIS_MAGIC:
        raise BadMagicError(f"{path}: expected magic {BASIS_MAGIC!r}, found {raw[:6]!r}")
    h, w, k, frame_h, frame_w = struct.unpack("<5I", raw[6:26])
    expected = 4 * h * w * (k + 1)
    actual = len(raw) - 26
    if actual != expected:
        raise TruncatedPayloadError(
            f"{path}: payload is {actual} bytes, expected {expected}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=26)
    if not np.all(np.isfinite(data)):
        raise NonFiniteValueError(f"{path}: basis payload contains non-finite values")
    mu = data[: h * w].reshape(h, w)
    if np.any(mu <= 0):
        raise RangeViolationError(f"{path}: mean depth plane has nonpositive entries")
    sigma = data[h * w :].reshape(k, h, w)
    return DepthBasis(mu=mu, sigma=sigma, frame_width=frame_w, frame_height=frame_h)


# ---------------------------------------------------------------------------
# keypoints (ASCII)

def store_keypoints(path, keypoints: KeypointSet) -> None:
    n, d = keypoints.descriptors.shape
    lines = [f"{KEYPOINT_MAGIC} {n} {d}"]
    for uv, desc in zip(keypoints.pixels, keypoints.descriptors):
        fields = [_fmt(uv[0]), _fmt(uv[1])] + [_fmt(x) for x in desc]
        lines.append(" ".join(fields))
    Path(path).write_text("\n".join(lines) + "\n")


def load_keypoints(path) -> KeypointSet:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise TruncatedPayloadError(f"{path}: empty file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != KEYPOINT_MAGIC:
        raise BadMagicError(f"{path}: bad header line {lines[0]!r}")
    n, d = int(head[1]), int(head[2])
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != n:
        raise TruncatedPayloadError(f"{path}: expected {n} keypoint lines, found {len(body)}")
    pixels = np.empty((n, 2))
    descriptors = np.empty((n, d))
    for row, ln in enumerate(body):
        parts = ln.split()
        if len(parts) != d + 2:
            raise TruncatedPayloadError(
                f"{path}: line {row + 2} has {len(parts)} fields, expected {d + 2}"
            )
        vals = np.array([float(p) for p in parts])
        if not np.all(np.isfinite(vals)):
            raise NonFiniteValueError(f"{path}: non-finite value on line {row + 2}")
        pixels[row] = vals[:2]
        descriptors[row] = vals[2:]
    # KeypointSet re-normalizes descriptor rows on construction
    return KeypointSet(pixels, descriptors)


# ---------------------------------------------------------------------------
# matches (ASCII)

def store_matches(path, matches: MatchSet) -> None:
    lines = [f"{MATCH_MAGIC} {len(matches)}"]
    lines += [f"{int(a)} {int(b)}" for a, b in matches.pairs]
    Path(path).write_text("\n".join(lines) + "\n")


def load_matches(path, n_a: int | None = None, n_b: int | None = None) -> MatchSet:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise TruncatedPayloadError(f"{path}: empty file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != MATCH_MAGIC:
        raise BadMagicError(f"{path}: bad header line {lines[0]!r}")
    m = int(head[1])
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != m:
        raise TruncatedPayloadError(f"{path}: expected {m} match lines, found {len(body)}")
    pairs = np.empty((m, 2), dtype=np.intp)
    for row, ln in enumerate(body):
        parts = ln.split()
        if len(parts) != 2:
            raise TruncatedPayloadError(f"{path}: line {row + 2} must have 2 indices")
        pairs[row] = (int(parts[0]), int(parts[1]))
    if np.any(pairs < 0):
        raise RangeViolationError(f"{path}: negative match index")
    if n_a is not None and np.any(pairs[:, 0] >= n_a):
        raise RangeViolationError(f"{path}: match index exceeds {n_a} keypoints in frame a")
    if n_b is not None and np.any(pairs[:, 1] >= n_b):
        raise RangeViolationError(f"{path}: match index exceeds {n_b} keypoints in frame b")
    return MatchSet(pairs)


# ---------------------------------------------------------------------------
# trajectories (ASCII, scalar-first unit quaternions)

def _pose_to_quat(pose: RigidPose) -> np.ndarray:
    q = Rotation.from_matrix(pose.rotation).as_quat()  # (x, y, z, w)
    q = np.array([q[3], q[0], q[1], q[2]])
    return q if q[0] >= 0 else -q


def store_trajectory(path, poses, frame_ids=None) -> None:
    frame_ids = frame_ids if frame_ids is not None else range(len(poses))
    lines = []
    for fid, pose in zip(frame_ids, poses):
        t = pose.translation
        q = _pose_to_quat(pose)
        lines.append(
            f"{int(fid)} {_fmt(t[0])} {_fmt(t[1])} {_fmt(t[2])} "
            f"{_fmt(q[0])} {_fmt(q[1])} {_fmt(q[2])} {_fmt(q[3])}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_trajectory(path):
    """Returns (frame_ids, poses); quaternions are validated to unit norm."""
    path = Path(path)
    frame_ids = []
    poses = []
    for row, ln in enumerate(Path(path).read_text().splitlines()):
        if not ln.strip():
            continue
        parts = ln.split()
        if len(parts) != 8:
            raise TruncatedPayloadError(f"{path}: line {row + 1} has {len(parts)} fields, expected 8")
        vals = np.array([float(p) for p in parts[1:]])
        if not np.all(np.isfinite(vals)):
            raise NonFiniteValueError(f"{path}: non-finite value on line {row + 1}")
        t = vals[:3]
        qw, qx, qy, qz = vals[3:]
        norm = np.sqrt(qw**2 + qx**2 + qy**2 + qz**2)
        if abs(norm - 1.0) > QUAT_NORM_TOL:
            raise RangeViolationError(
                f"{path}: quaternion norm {norm:.6f} on line {row + 1} is not 1"
            )
        r = Rotation.from_quat([qx, qy, qz, qw]).as_matrix()
        frame_ids.append(int(parts[0]))
        poses.append(RigidPose(r, t))
    if not poses:
        raise TruncatedPayloadError(f"{path}: empty trajectory")
    return frame_ids, poses


# ---------------------------------------------------------------------------
# depth codes (ASCII)

def store_codes(path, codes: np.ndarray) -> None:
    codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    n, k = codes.shape
    lines = [f"{CODE_MAGIC} {n} {k}"]
    lines += [" ".join(_fmt(x) for x in row) for row in codes]
    Path(path).write_text("\n".join(lines) + "\n")


def load_codes(path) -> np.ndarray:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise TruncatedPayloadError(f"{path}: empty file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != CODE_MAGIC:
        raise BadMagicError(f"{path}: bad header line {lines[0]!r}")
    n, k = int(head[1]), int(head[2])
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != n:
        raise TruncatedPayloadError(f"{path}: expected {n} code lines, found {len(body)}")
    codes = np.empty((n, k))
    for row, ln in enumerate(body):
        parts = ln.split()
        if len(parts) != k:
            raise TruncatedPayloadError(
                f"{path}: line {row + 2} has {len(parts)} values, expected {k}"
            )
        codes[row] = [float(p) for p in parts]
    if not np.all(np.isfinite(codes)):
        raise NonFiniteValueError(f"{path}: non-finite code value")
    return codes


# ---------------------------------------------------------------------------
# scene manifest

@dataclass
class SceneFrame:
    frame_id: int
    basis_path: Path
    keypoint_path: Path
    intrinsics: Intrinsics


def store_manifest(path, frames) -> None:
    lines = []
    for fr in frames:
        k = fr.intrinsics
        lines.append(
            f"{fr.frame_id} {fr.basis_path} {fr.keypoint_path} "
            f"{_fmt(k.fx)} {_fmt(k.fy)} {_fmt(k.cx)} {_fmt(k.cy)} {k.width} {k.height}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path) -> list:
    path = Path(path)
    frames = []
    for row, ln in enumerate(path.read_text().splitlines()):
        if not ln.strip():
            continue
        parts = ln.split()
        if len(parts) != 9:
            raise TruncatedPayloadError(
                f"{path}: line {row + 1} has {len(parts)} fields, expected 9"
            )
        intr = Intrinsics(
            fx=float(parts[3]),
            fy=float(parts[4]),
            cx=float(parts[5]),
            cy=float(parts[6]),
            width=int(parts[7]),
            height=int(parts[8]),
        )
        frames.append(
            SceneFrame(
                frame_id=int(parts[0]),
                basis_path=path.parent / parts[1],
                keypoint_path=path.parent / parts[2],
                intrinsics=intr,
            )
        )
    if not frames:
        raise TruncatedPayloadError(f"{path}: empty manifest")
    return frames


# ---------------------------------------------------------------------------
# PLY export

def export_ply(path, poses, dense_depths, intrinsics, colors=None, stride: int = 1):
    """Write a binary little-endian PLY point cloud of the reconstruction.

    One vertex per stride-sampled depth pixel, backprojected through its
    camera. ``colors`` may give per-frame (H, W, 3) uint8 arrays; vertices
    default to mid-gray.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    chunks = []
    count = 0
    for f, (pose, depth) in enumerate(zip(poses, dense_depths)):
        depth = np.asarray(depth, dtype=np.float64)
        h, w = depth.shape
        basis_like = DepthBasis(
            mu=np.ones((h, w)),
            sigma=np.ones((1, h, w)),
            frame_width=intrinsics.width,
            frame_height=intrinsics.height,
        )
        uv = node_pixels(basis_like)[::stride]
        rays = pixel_rays(uv, intrinsics)
        d = depth.ravel()[::stride]
        cam = d[:, None] * rays
        world = cam @ pose.rotation.T + pose.translation
        if colors is not None:
            rgb = np.asarray(colors[f]).reshape(-1, 3)[::stride].astype(np.uint8)
        else:
            rgb = np.full((world.shape[0], 3), 128, dtype=np.uint8)
        rec = np.empty(
            world.shape[0],
            dtype=[("xyz", "<f4", 3), ("rgb", "u1", 3)],
        )
        rec["xyz"] = world.astype(np.float32)
        rec["rgb"] = rgb
        chunks.append(rec.tobytes())
        count += world.shape[0]
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {count}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "property uchar red\n"
        "property uchar green\n"
        "property uchar blue\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        for chunk in chunks:
            fh.write(chunk)
