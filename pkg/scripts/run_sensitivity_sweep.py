#!/usr/bin/env python3
"""Batch-size x dropout sensitivity grid on the synthetic set.

Emits a plot-ready CSV (batch_size, dropout, accuracy, runtime_s,
status, error); no figures are rendered here.
"""

import argparse
import tempfile
from pathlib import Path

from wmc.data_io import BodyMap, load_manifest
from wmc.model import DEFAULT_BATCH_GRID, DEFAULT_DROPOUT_GRID, FusionModelConfig, sweep
from wmc.synthetic import make_synthetic_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", type=Path, help="dataset dir (default: temp synthetic)")
    ap.add_argument("--out", type=Path, default=Path("sweep.csv"))
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=123)
    ap.add_argument("--mode", default="location_only",
                    choices=["image_only", "location_only", "multimodal"])
    args = ap.parse_args()

    if args.data:
        manifest = args.data / "manifest.csv"
    else:
        tmp = Path(tempfile.mkdtemp(prefix="wmc-synth-"))
        manifest = make_synthetic_dataset(tmp, image_size=32)

    records = load_manifest(manifest)
    cfg = FusionModelConfig(classes=("D", "P", "S", "V"), mode=args.mode,
                            image_size=32, epochs=args.epochs, seed=args.seed,
                            split=0.8)
    report = sweep(records, cfg, BodyMap.default(),
                   batch_grid=DEFAULT_BATCH_GRID, dropout_grid=DEFAULT_DROPOUT_GRID)
    report.to_csv(args.out)
    best = report.best()
    print(f"wrote {args.out} ({report.n_succeeded}/{len(report.cells)} cells ok)")
    if best:
        print(f"best cell: batch={best.batch_size} dropout={best.dropout:g} "
              f"accuracy={best.accuracy:.4f}")


if __name__ == "__main__":
    main()
