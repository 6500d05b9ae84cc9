#!/usr/bin/env python3
"""Coupled vs stacked vs parameter-matched dense, at two cascade lengths.

Thin wrapper over the `compare` subcommand: generates a shared dataset, then
runs the three-way comparison for U=2 and U=4 with one seed and budget. The
per-architecture training logs, checkpoints, and a comparison.csv land under
the output directory.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from cunet.cli import dispatch
from cunet.synth import write_dataset


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--root", default="comparison_run")
    ap.add_argument("--train-count", type=int, default=512)
    ap.add_argument("--val-count", type=int, default=128)
    ap.add_argument("--epochs", type=int, default=15)
    args = ap.parse_args()

    train_dir = os.path.join(args.root, "train")
    val_dir = os.path.join(args.root, "val")
    if not os.path.exists(os.path.join(train_dir, "manifest")):
        print(f"generating {args.train_count}/{args.val_count} samples")
        write_dataset(train_dir, args.train_count, seed=300, input_res=64)
        write_dataset(val_dir, args.val_count, seed=301, input_res=64)

    for u in (2, 4):
        print(f"\n##### cascade length {u} #####")
        code = dispatch([
            "compare", "--u", str(u), "--m", "32", "--n", "16", "--depth", "3",
            "--keypoints", "16", "--input-res", "64",
            "--data", train_dir, "--val-data", val_dir,
            "--out", os.path.join(args.root, f"u{u}"),
            "--epochs", str(args.epochs), "--batch-size", "8"])
        if code != 0:
            print(f"compare failed with exit code {code}", file=sys.stderr)
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
