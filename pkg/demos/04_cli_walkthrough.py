"""The file-based workflow: synth -> bundle -> eval -> export-ply.

Everything here also works from a shell; this script just drives the same
subcommands in-process and shows the artifacts they leave behind.
"""

import tempfile
from pathlib import Path

from ridgebundle.cli import run_cli


def main():
    root = Path(tempfile.mkdtemp(prefix="ridgebundle_demo_"))
    scene = root / "scene"
    recon = root / "recon"

    print("== synth: write a 15-frame synthetic scene ==")
    assert run_cli([
        "synth", "--out", str(scene), "--frames", "15", "--seed", "3",
        "--keypoints", "70", "--basis-k", "8",
        "--pixel-noise", "0.2", "--descriptor-noise", "0.03",
    ]) == 0

    print("\n== bundle: reconstruct the scene from its files ==")
    assert run_cli([
        "bundle", "--scene", str(scene), "--out", str(recon),
        "--window", "3", "--random-pairs", "1", "--ransac-runs", "6",
        "--max-iterations", "800", "--seed", "1", "--deterministic",
    ]) == 0

    print("\n== eval: score the reconstruction against ground truth ==")
    assert run_cli([
        "eval", "--scene", str(scene),
        "--pred-trajectory", str(recon / "trajectory.txt"),
        "--pred-codes", str(recon / "codes.txt"),
        "--gt-trajectory", str(scene / "gt_trajectory.txt"),
        "--gt-codes", str(scene / "gt_codes.txt"),
        "--report-json", str(root / "report.json"),
    ]) == 0

    print("\n== export-ply: dump the dense point cloud ==")
    assert run_cli([
        "export-ply", "--scene", str(scene),
        "--trajectory", str(recon / "trajectory.txt"),
        "--codes", str(recon / "codes.txt"),
        "--out", str(root / "cloud.ply"), "--stride", "4",
    ]) == 0

    print(f"\nartifacts under {root}:")
    for p in sorted(root.rglob("*")):
        if p.is_file():
            print(f"  {p.relative_to(root)}  ({p.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
