"""Ground-truth scene generator for end-to-end testing without a depth network.

Generates a box room with planar clutter, a smooth random-walk camera
trajectory, a pool of 3D landmarks, and per-frame depth bases whose sampled
depths reproduce the landmarks exactly. Noise (keypoint jitter, descriptor
jitter, depth-code error, outlier matches) is injected on top at configurable
levels, so every pipeline stage can be validated against known ground truth.

Exact cross-frame consistency is arranged in two steps: landmark world
positions are frozen first (sampled from per-frame rendered depth), then each
frame's depth grid receives a minimum-norm correction forcing its bilinear
field through every landmark that frame observes. Sampled keypoint depth then
backprojects to the shared world point to solver precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from .bundle import PairConstraint, make_constraint, propose_pairs
from .depthbasis import DepthBasis, bilinear_sample, evaluate_dense, node_pixels
from .geometry import (
    Intrinsics,
    RigidPose,
    compose_chain_arrays,
    pixel_rays,
    project,
    relative_pose,
    tait_bryan_to_rotation,
    transform_points,
)
from .matching import KeypointSet, MatchSet

MIN_RAY_DEPTH = 0.05
MIN_VISIBLE_DEPTH = 0.35
OCCLUSION_TOL = 0.12
PIXEL_MARGIN = 2.0
# landmarks live on smooth surface patches: cells whose corner depths span
# more than this are considered discontinuous and are not sampled/constrained
CELL_SPAN_TOL = 0.30
# minimum separation (grid units) between a frame's keypoints, which keeps
# the consistency corrections well conditioned
MIN_GRID_SEPARATION = 0.5
# corrections larger than this signal conflicting constraints; the worst
# offender is dropped and the frame is re-solved
MAX_CORRECTION = 0.30


@dataclass
class SceneSpec:
    """Parameters of a synthetic scene; fully deterministic given ``seed``."""

    n_frames: int
    seed: int = 0
    # camera random walk
    step_rot_max_deg: float = 2.0
    step_trans_max: float = 0.08
    # room geometry (full extents, meters) and clutter plane count
    room_size: tuple = (6.0, 5.0, 3.0)
    n_clutter: int = 6
    # depth basis (coarse by a factor of 8 relative to the frame)
    basis_k: int = 32
    basis_height: int = 60
    basis_width: int = 80
    frame_width: int = 640
    frame_height: int = 480
    focal: float = 550.0
    # landmarks / keypoints
    keypoints_per_frame: int = 120
    max_keypoints_per_frame: int = 280
    anchor_window: int = 8
    descriptor_dim: int = 32
    # noise levels
    pixel_noise: float = 0.0
    code_noise: float = 0.0
    descriptor_noise: float = 0.0
    outlier_rate: float = 0.0
    # basis construction: factor-plane offset as a fraction of mean depth
    code_perturbation: float = 0.05
    max_retries: int = 20

    def __post_init__(self):
        if self.n_frames < 1 or self.keypoints_per_frame < 1 or self.basis_k < 1:
            raise ValueError("counts must be positive")
        for rate in (self.pixel_noise, self.code_noise, self.descriptor_noise):
            if rate < 0:
                raise ValueError("noise levels must be nonnegative")
        if not 0 <= self.outlier_rate <= 1:
            raise ValueError("outlier rate must lie in [0, 1]")

    def intrinsics(self) -> Intrinsics:
        return Intrinsics(
            fx=self.focal,
            fy=self.focal,
            cx=self.frame_width / 2.0,
            cy=self.frame_height / 2.0,
            width=self.frame_width,
            height=self.frame_height,
        )


@dataclass
class GroundTruth:
    """Everything the generator knows about a scene."""

    spec: SceneSpec
    poses: list
    intrinsics: Intrinsics
    bases: list
    codes: np.ndarray
    dense_depths: np.ndarray
    surface_depths: np.ndarray
    landmarks: np.ndarray
    visible: np.ndarray
    frame_keypoint_ids: list
    frame_keypoint_uv: list
    frame_descriptors: list
    delta_angles: np.ndarray
    delta_translations: np.ndarray

    def relative_pose(self, i: int, j: int) -> RigidPose:
        return relative_pose(self.poses[i], self.poses[j])

    def frame_keypoints(self, f: int) -> KeypointSet:
        return KeypointSet(self.frame_keypoint_uv[f], self.frame_descriptors[f])


@dataclass
class _Clutter:
    axis: int
    coord: float
    ax1: int
    lo1: float
    hi1: float
    ax2: int
    lo2: float
    hi2: float


def _render_depth(origin, rotation, rays_cam, half, clutter) -> np.ndarray:
    """Closed-form z-depth of the room surface along each camera ray.

    Rays have unit z in the camera frame, so the ray parameter equals camera
    z-depth directly.
    """
    dirs = rays_cam @ rotation.T
    n = rays_cam.shape[0]
    depth = np.full(n, np.inf)
    for axis in range(3):
        denom = dirs[:, axis]
        safe = np.where(np.abs(denom) > 1e-12, denom, np.inf)
        for sign in (-1.0, 1.0):
            t = (sign * half[axis] - origin[axis]) / safe
            hit = t > MIN_RAY_DEPTH
            depth[hit] = np.minimum(depth[hit], t[hit])
    for c in clutter:
        denom = dirs[:, c.axis]
        safe = np.where(np.abs(denom) > 1e-12, denom, np.inf)
        t = (c.coord - origin[c.axis]) / safe
        p1 = origin[c.ax1] + t * dirs[:, c.ax1]
        p2 = origin[c.ax2] + t * dirs[:, c.ax2]
        hit = (
            (t > MIN_RAY_DEPTH)
            & (t < depth)
            & (p1 >= c.lo1)
            & (p1 <= c.hi1)
            & (p2 >= c.lo2)
            & (p2 <= c.hi2)
        )
        depth[hit] = t[hit]
    if not np.all(np.isfinite(depth)):
        raise RuntimeError("render ray escaped the room")
    return depth


def _grid_coords_raw(uv, spec):
    sx = (spec.basis_width - 1) / (spec.frame_width - 1)
    sy = (spec.basis_height - 1) / (spec.frame_height - 1)
    return uv[:, 0] * sx, uv[:, 1] * sy


def _bilinear_rows(gx, gy, h, w):
    """Sparse bilinear sampling rows matching depthbasis.bilinear_sample."""
    ix = np.clip(np.floor(gx).astype(np.intp), 0, max(w - 2, 0))
    iy = np.clip(np.floor(gy).astype(np.intp), 0, max(h - 2, 0))
    fx = gx - ix
    fy = gy - iy
    ix1 = np.minimum(ix + 1, w - 1)
    iy1 = np.minimum(iy + 1, h - 1)
    cols = np.stack([iy * w + ix, iy * w + ix1, iy1 * w + ix, iy1 * w + ix1], axis=1)
    weights = np.stack(
        [(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx], axis=1
    )
    return cols, weights


def _cell_span(grid: np.ndarray) -> np.ndarray:
    """Max minus min of the four corner depths of every grid cell."""
    stacked = np.stack([grid[:-1, :-1], grid[:-1, 1:], grid[1:, :-1], grid[1:, 1:]])
    return stacked.max(axis=0) - stacked.min(axis=0)


def _smooth_plane(rng, h, w, coarse=(6, 8)):
    """Low-frequency random plane: coarse noise bilinearly upsampled."""
    ch, cw = coarse
    coarse_vals = rng.standard_normal((ch, cw))
    gy = np.linspace(0, ch - 1, h)
    gx = np.linspace(0, cw - 1, w)
    gxx, gyy = np.meshgrid(gx, gy)
    return bilinear_sample(coarse_vals, gxx.ravel(), gyy.ravel()).reshape(h, w)


def _make_trajectory(rng, spec, half):
    bound = 0.55 * half
    n = spec.n_frames
    rot_max = math.radians(spec.step_rot_max_deg)
    angles = rng.uniform(-rot_max, rot_max, size=(n, 3))
    trans = np.zeros((n, 3))
    pos = rng.uniform(-0.2, 0.2, size=3) * half
    trans[0] = pos
    for t in range(1, n):
        step = rng.uniform(-spec.step_trans_max, spec.step_trans_max, size=3)
        step -= 0.05 * pos  # mild pull toward the room center
        pos = pos + step
        trans[t] = step
    return angles, trans, bound


def generate_scene(spec: SceneSpec) -> GroundTruth:
    """Build a deterministic ground-truth scene from its spec."""
    root = np.random.SeedSequence(spec.seed)
    (
        s_traj,
        s_clutter,
        s_anchor,
        s_desc,
        s_pixnoise,
        s_descnoise,
        s_basis,
    ) = root.spawn(7)
    half = np.array(spec.room_size) / 2.0
    intr = spec.intrinsics()

    # trajectory, regenerated if the camera leaves the room interior
    traj_streams = s_traj.spawn(spec.max_retries)
    for attempt in range(spec.max_retries):
        rng = np.random.default_rng(traj_streams[attempt])
        angles, trans, bound = _make_trajectory(rng, spec, half)
        positions = np.cumsum(trans, axis=0)
        if np.all(np.abs(positions) <= bound):
            break
    else:
        raise RuntimeError(
            f"could not keep the camera inside the room in {spec.max_retries} tries"
        )
    rotations, translations = compose_chain_arrays(angles, trans)
    poses = [RigidPose(r, t) for r, t in zip(rotations, translations)]

    # clutter planes sit in the shell between the camera region and the walls
    rng_cl = np.random.default_rng(s_clutter)
    clutter = []
    for _ in range(spec.n_clutter):
        axis = int(rng_cl.integers(0, 3))
        side = rng_cl.choice([-1.0, 1.0])
        coord = side * rng_cl.uniform(0.70, 0.92) * half[axis]
        ax1, ax2 = [a for a in range(3) if a != axis]
        c1 = rng_cl.uniform(-0.6, 0.6) * half[ax1]
        c2 = rng_cl.uniform(-0.6, 0.6) * half[ax2]
        e1 = rng_cl.uniform(0.4, 1.2)
        e2 = rng_cl.uniform(0.4, 1.2)
        clutter.append(
            _Clutter(axis, coord, ax1, c1 - e1, c1 + e1, ax2, c2 - e2, c2 + e2)
        )

    # per-frame rendered depth at the basis grid nodes
    h_b, w_b = spec.basis_height, spec.basis_width
    probe = DepthBasis(
        mu=np.ones((h_b, w_b)),
        sigma=np.ones((1, h_b, w_b)),
        frame_width=spec.frame_width,
        frame_height=spec.frame_height,
    )
    node_uv = node_pixels(probe)
    node_rays = pixel_rays(node_uv, intr)
    base_grids = np.empty((spec.n_frames, h_b, w_b))
    for f in range(spec.n_frames):
        base_grids[f] = _render_depth(
            translations[f], rotations[f], node_rays, half, clutter
        ).reshape(h_b, w_b)

    # landmarks anchored round-robin: frame a contributes keypoints_per_frame
    # points sampled on its own rendered depth field
    kpf = spec.keypoints_per_frame
    n_land = spec.n_frames * kpf
    anchor_streams = s_anchor.spawn(spec.n_frames)
    landmarks = np.empty((n_land, 3))
    anchor_uv = np.empty((n_land, 2))
    n_cells = (spec.basis_width - 1) * (spec.basis_height - 1)
    if kpf > n_cells:
        raise ValueError(
            f"keypoints_per_frame={kpf} exceeds the {n_cells} basis cells available"
        )
    for f in range(spec.n_frames):
        rng_a = np.random.default_rng(anchor_streams[f])
        spans = _cell_span(base_grids[f])
        chosen = []
        chosen_g = np.zeros((0, 2))
        attempts = 0
        while len(chosen) < kpf:
            attempts += 1
            if attempts > 500 * kpf:
                raise RuntimeError("could not place anchors; reduce keypoints_per_frame")
            u = rng_a.uniform(PIXEL_MARGIN, spec.frame_width - 1 - PIXEL_MARGIN)
            v = rng_a.uniform(PIXEL_MARGIN, spec.frame_height - 1 - PIXEL_MARGIN)
            gx, gy = _grid_coords_raw(np.array([[u, v]]), spec)
            cx = min(int(gx[0]), spec.basis_width - 2)
            cy = min(int(gy[0]), spec.basis_height - 2)
            if spans[cy, cx] > CELL_SPAN_TOL:
                continue
            g = np.array([gx[0], gy[0]])
            if chosen_g.size and np.linalg.norm(chosen_g - g, axis=1).min() < MIN_GRID_SEPARATION:
                continue
            chosen_g = np.vstack([chosen_g, g])
            chosen.append((u, v))
        uv = np.array(chosen)
        gx, gy = _grid_coords_raw(uv, spec)
        d = bilinear_sample(base_grids[f], gx, gy)
        pts_cam = d[:, None] * pixel_rays(uv, intr)
        landmarks[f * kpf : (f + 1) * kpf] = transform_points(pts_cam, poses[f])
        anchor_uv[f * kpf : (f + 1) * kpf] = uv

    # visibility: in front, inside the frame, and not occluded by the surface
    visible = np.zeros((spec.n_frames, n_land), dtype=bool)
    land_uv = np.zeros((spec.n_frames, n_land, 2))
    land_z = np.zeros((spec.n_frames, n_land))
    for f in range(spec.n_frames):
        cam = (landmarks - translations[f]) @ rotations[f]
        z = cam[:, 2]
        ok = z > MIN_VISIBLE_DEPTH
        uv = np.zeros((n_land, 2))
        uv[ok] = project(cam[ok], intr)
        ok &= (
            (uv[:, 0] >= PIXEL_MARGIN)
            & (uv[:, 0] <= spec.frame_width - 1 - PIXEL_MARGIN)
            & (uv[:, 1] >= PIXEL_MARGIN)
            & (uv[:, 1] <= spec.frame_height - 1 - PIXEL_MARGIN)
        )
        idx = np.flatnonzero(ok)
        if idx.size:
            gx, gy = _grid_coords_raw(uv[idx], spec)
            surf = bilinear_sample(base_grids[f], gx, gy)
            spans = _cell_span(base_grids[f])
            cx = np.minimum(gx.astype(int), spec.basis_width - 2)
            cy = np.minimum(gy.astype(int), spec.basis_height - 2)
            bad = (np.abs(surf - z[idx]) > OCCLUSION_TOL) | (spans[cy, cx] > CELL_SPAN_TOL)
            ok[idx[bad]] = False
        visible[f] = ok
        land_uv[f] = uv
        land_z[f] = z

    # per-frame keypoint lists: visible landmarks anchored within the id
    # window, lowest ids first, capped per frame and per basis cell
    frame_ids = []
    for f in range(spec.n_frames):
        lo = max(0, f - spec.anchor_window) * kpf
        hi = min(spec.n_frames, f + spec.anchor_window + 1) * kpf
        cand = np.flatnonzero(visible[f][lo:hi]) + lo
        picked = []
        picked_g = np.zeros((0, 2))
        for lid in cand:
            gx, gy = _grid_coords_raw(land_uv[f][lid : lid + 1], spec)
            g = np.array([gx[0], gy[0]])
            if picked_g.size and np.linalg.norm(picked_g - g, axis=1).min() < MIN_GRID_SEPARATION:
                continue
            picked_g = np.vstack([picked_g, g])
            picked.append(lid)
            if len(picked) >= spec.max_keypoints_per_frame:
                break
        frame_ids.append(np.array(picked, dtype=np.intp))

    # minimum-norm grid corrections: force each frame's bilinear depth field
    # through every landmark it lists, so matches are exactly consistent
    surface = base_grids.copy()
    for f in range(spec.n_frames):
        ids = frame_ids[f]
        while ids.size:
            gx, gy = _grid_coords_raw(land_uv[f][ids], spec)
            cols, weights = _bilinear_rows(gx, gy, h_b, w_b)
            resid = land_z[f][ids] - bilinear_sample(base_grids[f], gx, gy)
            rows = np.repeat(np.arange(ids.size), 4)
            a = scipy.sparse.csr_matrix(
                (weights.ravel(), (rows, cols.ravel())), shape=(ids.size, h_b * w_b)
            )
            gram = (a @ a.T).toarray()
            try:
                y = np.linalg.solve(gram, resid)
                correction = a.T @ y
            except np.linalg.LinAlgError:
                correction = None
            if correction is None or np.abs(a @ correction - resid).max() > 1e-9:
                # ill-conditioned gram: fall back to a dense minimum-norm solve
                correction, *_ = np.linalg.lstsq(a.toarray(), resid, rcond=None)
            if np.abs(a @ correction - resid).max() > 1e-8:
                raise RuntimeError("consistency correction failed to interpolate landmarks")
            if np.abs(correction).max() <= MAX_CORRECTION:
                surface[f] += correction.reshape(h_b, w_b)
                break
            # conflicting constraints: drop the worst-fitting landmark from
            # this frame's list and re-solve
            ids = np.delete(ids, int(np.argmax(np.abs(resid))))
        frame_ids[f] = ids
    if np.any(surface <= MIN_RAY_DEPTH):
        raise RuntimeError("grid correction produced a nonpositive depth")

    # per-frame bases: unit-variance smooth factor planes, a surface code that
    # hides part of the surface in the factor span, and optional code noise
    rng_basis = np.random.default_rng(s_basis)
    bases = []
    codes = np.empty((spec.n_frames, spec.basis_k))
    dense = np.empty_like(surface)
    for f in range(spec.n_frames):
        sigma = np.empty((spec.basis_k, h_b, w_b))
        for kk in range(spec.basis_k):
            plane = _smooth_plane(rng_basis, h_b, w_b)
            sd = plane.std(ddof=1)
            while sd < 1e-8:
                plane = _smooth_plane(rng_basis, h_b, w_b)
                sd = plane.std(ddof=1)
            sigma[kk] = (plane - plane.mean()) / sd
        beta_surf = rng_basis.standard_normal(spec.basis_k)
        offset = np.tensordot(beta_surf, sigma, axes=1)
        target = spec.code_perturbation * float(surface[f].mean())
        rms = float(np.sqrt(np.mean(offset**2)))
        scale = target / rms if rms > 0 else 0.0
        beta_surf = beta_surf * scale
        mu = surface[f] - np.tensordot(beta_surf, sigma, axes=1)
        while np.any(mu <= MIN_RAY_DEPTH):
            beta_surf *= 0.7
            mu = surface[f] - np.tensordot(beta_surf, sigma, axes=1)
        eta = spec.code_noise * rng_basis.standard_normal(spec.basis_k)
        beta_gt = beta_surf + eta
        basis = DepthBasis(
            mu=mu,
            sigma=sigma,
            frame_width=spec.frame_width,
            frame_height=spec.frame_height,
        )
        d = evaluate_dense(basis, beta_gt)
        while np.any(d <= MIN_RAY_DEPTH):
            eta *= 0.5
            beta_gt = beta_surf + eta
            d = evaluate_dense(basis, beta_gt)
        bases.append(basis)
        codes[f] = beta_gt
        dense[f] = d

    # descriptors: one unit vector per landmark, jittered per frame
    rng_desc = np.random.default_rng(s_desc)
    base_desc = rng_desc.standard_normal((n_land, spec.descriptor_dim))
    base_desc /= np.linalg.norm(base_desc, axis=1)[:, None]
    descnoise_streams = s_descnoise.spawn(spec.n_frames)
    pixnoise_streams = s_pixnoise.spawn(spec.n_frames)
    frame_uv = []
    frame_desc = []
    for f in range(spec.n_frames):
        ids = frame_ids[f]
        uv = land_uv[f][ids].copy()
        if spec.pixel_noise > 0 and ids.size:
            rng_p = np.random.default_rng(pixnoise_streams[f])
            uv += spec.pixel_noise * rng_p.standard_normal(uv.shape)
            uv[:, 0] = np.clip(uv[:, 0], 0.5, spec.frame_width - 1.5)
            uv[:, 1] = np.clip(uv[:, 1], 0.5, spec.frame_height - 1.5)
        desc = base_desc[ids].copy()
        if spec.descriptor_noise > 0 and ids.size:
            rng_d = np.random.default_rng(descnoise_streams[f])
            desc = desc + spec.descriptor_noise * rng_d.standard_normal(desc.shape)
            desc /= np.linalg.norm(desc, axis=1)[:, None]
        frame_uv.append(uv)
        frame_desc.append(desc)

    return GroundTruth(
        spec=spec,
        poses=poses,
        intrinsics=intr,
        bases=bases,
        codes=codes,
        dense_depths=dense,
        surface_depths=surface,
        landmarks=landmarks,
        visible=visible,
        frame_keypoint_ids=frame_ids,
        frame_keypoint_uv=frame_uv,
        frame_descriptors=frame_desc,
        delta_angles=angles,
        delta_translations=trans,
    )


def render_matches(gt: GroundTruth, i: int, j: int, spec: SceneSpec | None = None):
    """Keypoint sets, planted matches, and inlier labels for one frame pair.

    True matches pair the landmarks both frames list. Outlier matches add
    ceil(outlier_rate * n_true) extra keypoints at random locations in each
    frame that share a descriptor (so they survive descriptor matching but
    violate the geometry). Returns (keypoints_i, keypoints_j, matches,
    labels) with labels True for inliers. A pair with no shared landmarks
    yields an empty match set.
    """
    spec = spec or gt.spec
    ids_i = gt.frame_keypoint_ids[i]
    ids_j = gt.frame_keypoint_ids[j]
    uv_i = gt.frame_keypoint_uv[i]
    uv_j = gt.frame_keypoint_uv[j]
    desc_i = gt.frame_descriptors[i]
    desc_j = gt.frame_descriptors[j]
    common, pos_i, pos_j = np.intersect1d(ids_i, ids_j, return_indices=True)
    n_true = common.size
    pairs = np.stack([pos_i, pos_j], axis=1) if n_true else np.zeros((0, 2), np.intp)
    n_out = int(np.ceil(spec.outlier_rate * n_true))
    if n_out:
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=spec.seed, spawn_key=(9000 + i, j))
        )
        out_uv_i = np.stack(
            [
                rng.uniform(PIXEL_MARGIN, spec.frame_width - 1 - PIXEL_MARGIN, n_out),
                rng.uniform(PIXEL_MARGIN, spec.frame_height - 1 - PIXEL_MARGIN, n_out),
            ],
            axis=1,
        )
        out_uv_j = np.stack(
            [
                rng.uniform(PIXEL_MARGIN, spec.frame_width - 1 - PIXEL_MARGIN, n_out),
                rng.uniform(PIXEL_MARGIN, spec.frame_height - 1 - PIXEL_MARGIN, n_out),
            ],
            axis=1,
        )
        shared = rng.standard_normal((n_out, spec.descriptor_dim))
        shared /= np.linalg.norm(shared, axis=1)[:, None]
        jitter = 0.02 * rng.standard_normal((2, n_out, spec.descriptor_dim))
        out_pairs = np.stack(
            [len(uv_i) + np.arange(n_out), len(uv_j) + np.arange(n_out)], axis=1
        )
        uv_i = np.vstack([uv_i, out_uv_i])
        uv_j = np.vstack([uv_j, out_uv_j])
        desc_i = np.vstack([desc_i, shared + jitter[0]])
        desc_j = np.vstack([desc_j, shared + jitter[1]])
        pairs = np.vstack([pairs, out_pairs])
    labels = np.concatenate([np.ones(n_true, bool), np.zeros(n_out, bool)])
    kp_i = KeypointSet(uv_i, desc_i)
    kp_j = KeypointSet(uv_j, desc_j)
    return kp_i, kp_j, MatchSet(pairs, frame_a=i, frame_b=j), labels


def perturb_relative_poses(
    gt: GroundTruth,
    rot_sigma_deg: float,
    trans_sigma: float,
    seed: int = 0,
    pairs=None,
) -> list[PairConstraint]:
    """Pair constraints whose relative poses carry injected noise.

    Each constraint uses the pair's planted matches (including any outliers
    the scene spec asks for) and the true relative pose composed with a random
    rotation of the given magnitude plus translation noise. ``pairs`` defaults
    to the standard sliding-window proposal.
    """
    if rot_sigma_deg < 0 or trans_sigma < 0:
        raise ValueError("perturbation magnitudes must be nonnegative")
    if pairs is None:
        pairs = propose_pairs(gt.spec.n_frames, seed=seed)
    rng = np.random.default_rng(seed)
    out = []
    for (i, j) in pairs:
        kp_i, kp_j, matches, _ = render_matches(gt, i, j)
        if len(matches) < 1:
            continue
        rel = gt.relative_pose(i, j)
        ang = math.radians(rot_sigma_deg) * rng.standard_normal(3)
        r_noisy = tait_bryan_to_rotation(ang) @ rel.rotation
        t_noisy = rel.translation + trans_sigma * rng.standard_normal(3)
        noisy = RigidPose(r_noisy, t_noisy)
        out.append(
            make_constraint(
                i,
                j,
                noisy,
                kp_i.pixels[matches.pairs[:, 0]],
                kp_j.pixels[matches.pairs[:, 1]],
                gt.bases[i],
                gt.bases[j],
                gt.intrinsics,
                gt.intrinsics,
            )
        )
    return out
