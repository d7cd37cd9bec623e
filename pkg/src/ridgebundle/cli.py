"""Command-line surface: synth, pairwise, bundle, eval, export-ply.

Options come from flags plus an optional key=value config file (flags win).
Exit codes: 0 success, 2 usage error, 3 malformed data file, 4 processing
failure. RIDGE_BUNDLE_THREADS caps pairwise-alignment workers and
``--deterministic`` forces single-threaded, ordered execution.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import fileio
from .bundle import (
    BundleConfig,
    BundleProblem,
    make_constraint,
    optimize_bundle,
    propose_pairs,
    warmstart_poses,
)
from .depthbasis import evaluate_dense
from .evaluation import evaluate_reconstruction
from .fileio import FileFormatError
from .geometry import Intrinsics
from .pairwise import FrameObservation, RansacConfig, align_pair
from .synthetic import SceneSpec, generate_scene

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_PROCESSING = 4


def _coerce(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    if value.lower() in ("true", "false"):
        return value.lower() == "true"
    return value


def _read_config_file(path) -> dict:
    out = {}
    for row, ln in enumerate(Path(path).read_text().splitlines()):
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        if "=" not in ln:
            raise FileFormatError(f"{path}: line {row + 1} is not key=value")
        key, value = ln.split("=", 1)
        out[key.strip().replace("-", "_")] = _coerce(value.strip())
    return out


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="ridgebundle",
        description="Sparse-match reconstruction with linear depth bases",
    )
    parser.add_argument("--config", help="key=value config file; flags override it")
    parser.add_argument("--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene directory")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--keypoints", type=int, default=120)
    p.add_argument("--basis-k", type=int, default=32)
    p.add_argument("--pixel-noise", type=float, default=0.0)
    p.add_argument("--code-noise", type=float, default=0.0)
    p.add_argument("--descriptor-noise", type=float, default=0.0)
    p.add_argument("--outlier-rate", type=float, default=0.0)

    p = sub.add_parser("pairwise", help="align two frames from their files")
    p.add_argument("--basis-a", required=True)
    p.add_argument("--keypoints-a", required=True)
    p.add_argument("--basis-b", required=True)
    p.add_argument("--keypoints-b", required=True)
    p.add_argument("--intrinsics", required=True, help="fx,fy,cx,cy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ransac-runs", type=int, default=32)
    p.add_argument("--ridge-lambda", type=float, default=0.05)
    p.add_argument("--out", help="optional report file")

    p = sub.add_parser("bundle", help="reconstruct a scene directory")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--random-pairs", type=int, default=2)
    p.add_argument("--ransac-runs", type=int, default=32)
    p.add_argument("--ridge-lambda", type=float, default=0.05)
    p.add_argument("--step-size", type=float, default=1e-3)
    p.add_argument("--max-iterations", type=int, default=3000)
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded, ordered reductions")

    p = sub.add_parser("eval", help="score a reconstruction against ground truth")
    p.add_argument("--scene", required=True)
    p.add_argument("--pred-trajectory", required=True)
    p.add_argument("--pred-codes", required=True)
    p.add_argument("--gt-trajectory", required=True)
    p.add_argument("--gt-codes", required=True)
    p.add_argument("--stride", type=int, default=8)
    p.add_argument("--report-json", help="also write the metrics as JSON")

    p = sub.add_parser("export-ply", help="write a point cloud of a reconstruction")
    p.add_argument("--scene", required=True)
    p.add_argument("--trajectory", required=True)
    p.add_argument("--codes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int, default=4)
    return parser, list(sub.choices.values())


def _load_scene_frames(scene_dir):
    manifest = fileio.load_manifest(Path(scene_dir) / "frames.txt")
    frames = []
    for entry in manifest:
        basis = fileio.load_basis(entry.basis_path)
        keypoints = fileio.load_keypoints(entry.keypoint_path)
        frames.append(FrameObservation(basis, keypoints, entry.intrinsics))
    return manifest, frames


def _cmd_synth(args) -> int:
    spec = SceneSpec(
        n_frames=args.frames,
        seed=args.seed,
        keypoints_per_frame=args.keypoints,
        basis_k=args.basis_k,
        pixel_noise=args.pixel_noise,
        code_noise=args.code_noise,
        descriptor_noise=args.descriptor_noise,
        outlier_rate=args.outlier_rate,
    )
    gt = generate_scene(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for f in range(spec.n_frames):
        basis_name = f"basis_{f:04d}.rsfmb"
        kp_name = f"keypoints_{f:04d}.rsfmk"
        fileio.store_basis(out / basis_name, gt.bases[f])
        fileio.store_keypoints(out / kp_name, gt.frame_keypoints(f))
        entries.append(
            fileio.SceneFrame(
                frame_id=f,
                basis_path=basis_name,
                keypoint_path=kp_name,
                intrinsics=gt.intrinsics,
            )
        )
    fileio.store_manifest(out / "frames.txt", entries)
    fileio.store_trajectory(out / "gt_trajectory.txt", gt.poses)
    fileio.store_codes(out / "gt_codes.txt", gt.codes)
    print(f"wrote {spec.n_frames}-frame scene to {out}")
    return EXIT_OK


def _parse_intrinsics(text: str, basis) -> Intrinsics:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 4:
        raise FileFormatError("--intrinsics expects fx,fy,cx,cy")
    return Intrinsics(
        fx=parts[0], fy=parts[1], cx=parts[2], cy=parts[3],
        width=basis.frame_width, height=basis.frame_height,
    )


def _cmd_pairwise(args) -> int:
    basis_a = fileio.load_basis(args.basis_a)
    basis_b = fileio.load_basis(args.basis_b)
    kp_a = fileio.load_keypoints(args.keypoints_a)
    kp_b = fileio.load_keypoints(args.keypoints_b)
    intr = _parse_intrinsics(args.intrinsics, basis_a)
    cfg = RansacConfig(seed=args.seed, runs=args.ransac_runs,
                       ridge_lambda=args.ridge_lambda)
    result = align_pair(
        FrameObservation(basis_a, kp_a, intr),
        FrameObservation(basis_b, kp_b, intr),
        cfg,
    )
    lines = [f"success {result.success}",
             f"inliers {len(result.inliers)}",
             f"coverage {result.coverage_score}"]
    if result.relative_pose is not None:
        q = fileio._pose_to_quat(result.relative_pose)
        t = result.relative_pose.translation
        lines.append("translation " + " ".join(repr(float(x)) for x in t))
        lines.append("quaternion_wxyz " + " ".join(repr(float(x)) for x in q))
    if result.message:
        lines.append(f"note {result.message}")
    report = "\n".join(lines)
    print(report)
    if args.out:
        Path(args.out).write_text(report + "\n")
    return EXIT_OK


def _cmd_bundle(args) -> int:
    manifest, frames = _load_scene_frames(args.scene)
    n = len(frames)
    pairs = propose_pairs(n, window=args.window, n_random=args.random_pairs,
                          seed=args.seed)
    threads = int(os.environ.get("RIDGE_BUNDLE_THREADS", "1"))
    if args.deterministic:
        threads = 1
    threads = max(1, threads)

    def _align(pair):
        i, j = pair
        cfg = RansacConfig(seed=args.seed * 1_000_003 + i * 8191 + j,
                           runs=args.ransac_runs, ridge_lambda=args.ridge_lambda)
        return align_pair(frames[i], frames[j], cfg)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_align, pairs))
    else:
        results = [_align(p) for p in pairs]

    constraints = []
    for (i, j), res in zip(pairs, results):
        if not res.success or res.relative_pose is None:
            logger.info("pair (%d, %d) rejected: %s", i, j, res.message)
            continue
        uv_i = frames[i].keypoints.pixels[res.inliers.pairs[:, 0]]
        uv_j = frames[j].keypoints.pixels[res.inliers.pairs[:, 1]]
        constraints.append(
            make_constraint(i, j, res.relative_pose, uv_i, uv_j,
                            frames[i].basis, frames[j].basis,
                            frames[i].intrinsics, frames[j].intrinsics)
        )
    if not constraints:
        print("no pair produced a usable constraint", file=sys.stderr)
        return EXIT_PROCESSING
    k = frames[0].basis.k
    config = BundleConfig(step_size=args.step_size,
                          max_iterations=args.max_iterations,
                          deterministic=args.deterministic)
    problem = BundleProblem(n, k, constraints, config,
                            bases=[fr.basis for fr in frames])
    warmstart_poses(problem)
    result = optimize_bundle(problem)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ids = [entry.frame_id for entry in manifest]
    fileio.store_trajectory(out / "trajectory.txt", result.poses, frame_ids=ids)
    fileio.store_codes(out / "codes.txt", problem.betas)
    (out / "loss_trace.txt").write_text(
        "\n".join(repr(x) for x in result.loss_trace) + "\n"
    )
    print(
        f"bundled {n} frames, {len(constraints)} constraints, "
        f"{result.iterations} iterations, final loss {result.loss_trace[-1]:.6g}"
    )
    return EXIT_OK


def _dense_from_codes(frames, codes, floor=0.01):
    depths = []
    for fr, code in zip(frames, codes):
        d = evaluate_dense(fr.basis, code)
        depths.append(np.maximum(d, floor))
    return depths


def _cmd_eval(args) -> int:
    manifest, frames = _load_scene_frames(args.scene)
    _, pred_poses = fileio.load_trajectory(args.pred_trajectory)
    _, gt_poses = fileio.load_trajectory(args.gt_trajectory)
    pred_codes = fileio.load_codes(args.pred_codes)
    gt_codes = fileio.load_codes(args.gt_codes)
    if not (len(pred_poses) == len(gt_poses) == len(frames)):
        raise FileFormatError("trajectory lengths and scene frame count differ")
    pred_depths = _dense_from_codes(frames, pred_codes)
    gt_depths = _dense_from_codes(frames, gt_codes)
    report = evaluate_reconstruction(
        pred_poses, pred_depths, gt_poses, gt_depths,
        frames[0].intrinsics, frames[0].basis, stride=args.stride,
    )
    for key, value in report.as_dict().items():
        print(f"{key} {value}")
    if args.report_json:
        Path(args.report_json).write_text(json.dumps(report.as_dict(), indent=2) + "\n")
    return EXIT_OK


def _cmd_export_ply(args) -> int:
    manifest, frames = _load_scene_frames(args.scene)
    _, poses = fileio.load_trajectory(args.trajectory)
    codes = fileio.load_codes(args.codes)
    depths = _dense_from_codes(frames, codes)
    fileio.export_ply(args.out, poses, depths, frames[0].intrinsics,
                      stride=args.stride)
    print(f"wrote {args.out}")
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "pairwise": _cmd_pairwise,
    "bundle": _cmd_bundle,
    "eval": _cmd_eval,
    "export-ply": _cmd_export_ply,
}


def run_cli(argv) -> int:
    """Parse argv and run one subcommand, returning a process exit status."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    parser, subparsers = _build_parser()
    if known.config:
        try:
            defaults = _read_config_file(known.config)
        except (OSError, FileFormatError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_DATA
        parser.set_defaults(**defaults)
        # subparsers re-apply their own defaults, so they need them too
        for sp in subparsers:
            sp.set_defaults(**defaults)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return _COMMANDS[args.command](args)
    except FileFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROCESSING


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
