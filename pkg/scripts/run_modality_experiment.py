#!/usr/bin/env python3
"""Modality ablation on the synthetic set.

Trains location-only, image-only, and multimodal models with identical
hyperparameters and prints a small accuracy table, mirroring the
location / image / image+location experiment structure.
"""

import argparse
import tempfile
import time
from pathlib import Path

from wmc.data_io import BodyMap, load_manifest
from wmc.model import FusionModelConfig, train
from wmc.synthetic import make_synthetic_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", type=Path, help="dataset dir (default: temp synthetic)")
    ap.add_argument("--epochs", type=int, default=120)
    ap.add_argument("--seed", type=int, default=123)
    ap.add_argument("--image-size", type=int, default=32)
    args = ap.parse_args()

    if args.data:
        manifest = args.data / "manifest.csv"
    else:
        tmp = Path(tempfile.mkdtemp(prefix="wmc-synth-"))
        manifest = make_synthetic_dataset(tmp, image_size=args.image_size)
        print(f"synthetic dataset: {tmp}")

    records = load_manifest(manifest)
    body_map = BodyMap.default()

    print(f"{'mode':15s} {'train_acc':>9s} {'eval_acc':>9s} {'macro_f1':>9s} {'secs':>6s}")
    for mode in ("location_only", "image_only", "multimodal"):
        cfg = FusionModelConfig(
            classes=("D", "P", "S", "V"), mode=mode, image_size=args.image_size,
            epochs=args.epochs, seed=args.seed, split=1.0)
        t0 = time.perf_counter()
        _, report, _ = train(records, cfg, body_map)
        print(f"{mode:15s} {report.final_train_accuracy:9.4f} "
              f"{report.eval_report.accuracy:9.4f} "
              f"{report.eval_report.macro_f1:9.4f} "
              f"{time.perf_counter() - t0:6.1f}")


if __name__ == "__main__":
    main()
