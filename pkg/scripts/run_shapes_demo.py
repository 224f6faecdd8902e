#!/usr/bin/env python3
"""End-to-end demo on the synthetic shape dataset.

Generates data, trains the 50x50 grain classifier for a few epochs,
evaluates the test split, renders LIME and SHAP heatmaps for one image,
and prints the text report.  Everything lands under the given directory.
"""

import argparse
import sys
from pathlib import Path

from grainforge.cli import main as cli
from grainforge.synthetic import generate_shape_dataset


def run(argv: list[str]) -> None:
    print(f"$ grainforge {' '.join(argv)}")
    code = cli(argv)
    if code != 0:
        sys.exit(code)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("work_dir", type=Path)
    parser.add_argument("--epochs", type=int, default=6)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    data = args.work_dir / "data"
    generate_shape_dataset(data, per_class_train=60, per_class_val=0, seed=args.seed)
    manifest = args.work_dir / "manifest.csv"
    weights = args.work_dir / "weights.gfw"
    history = args.work_dir / "history.csv"

    run(["ingest", str(data), "--out", str(manifest)])
    run(
        [
            "train",
            "--manifest", str(manifest),
            "--data-root", str(data),
            "--model", "rice",
            "--epochs", str(args.epochs),
            "--seed", str(args.seed),
            "--out", str(weights),
            "--history", str(history),
        ]
    )
    run(
        [
            "evaluate",
            "--weights", str(weights),
            "--manifest", str(manifest),
            "--data-root", str(data),
            "--split", "test",
            "--seed", str(args.seed),
            "--out-dir", str(args.work_dir),
        ]
    )
    sample = data / "disc" / "disc_0000.ppm"
    for method in ("lime", "shap"):
        run(
            [
                "explain",
                "--weights", str(weights),
                "--image", str(sample),
                "--method", method,
                "--samples", "400",
                "--seed", str(args.seed),
                "--out-dir", str(args.work_dir),
            ]
        )
    run(
        [
            "report",
            "--history", str(history),
            "--metrics", str(args.work_dir / "metrics.csv"),
        ]
    )


if __name__ == "__main__":
    main()
