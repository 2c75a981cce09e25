"""Command-line entry point.

Subcommands: ingest, train, eval, predict, gradcheck, sweep.  Every
command is deterministic given --seed; timestamps and wall-clock numbers
go to the stderr log stream (level via the WMC_LOG environment variable),
never into the written artifacts.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure or gradient-check exceedance.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import gradchecks
from .data_io import BodyMap, SIMPLIFIED_LOCATION_COUNT, ingest_image, load_manifest
from .errors import ConfigError, DataError, NumericError, WmcError
from .model import (
    DEFAULT_BATCH_GRID,
    DEFAULT_DROPOUT_GRID,
    FusionModelConfig,
    evaluate,
    load_model,
    save_model,
    sweep,
    train,
)

log = logging.getLogger("wmc")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

# closed config-file schema: key -> parser
_SCHEMA = {
    "manifest": str,
    "bodymap": str,
    "out": str,
    "checkpoint": str,
    "mode": str,
    "classes": lambda v: tuple(t.strip() for t in v.split(",") if t.strip()),
    "batch": int,
    "dropout": float,
    "epochs": int,
    "seed": int,
    "lr": float,
    "optimizer": str,
    "split": float,
    "image_size": int,
    "channels": lambda v: tuple(int(t) for t in v.split(",")),
    "kernel": int,
    "caps_in": int,
    "caps_in_dim": int,
    "caps_out": int,
    "caps_out_dim": int,
    "routing_iters": int,
    "d_img": int,
    "hidden_dim": int,
    "head": lambda v: tuple(int(t) for t in v.split(",")),
    "location_encoding": str,
    "embedding_dim": int,
    "lam": float,
    "sigma2": float,
    "augment_copies": int,
}


def _read_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"{path}:{line_no}: unknown config key {key!r}")
        try:
            values[key] = _SCHEMA[key](value.strip())
        except ValueError as e:
            raise ConfigError(f"{path}:{line_no}: bad value for {key}: {e}") from None
    return values


def _merge_settings(args) -> dict:
    """Config-file values overridden by explicit CLI flags."""
    settings = {}
    if getattr(args, "config", None):
        settings.update(_read_config_file(args.config))
    flag_map = {
        "manifest": "manifest", "bodymap": "bodymap", "out": "out",
        "checkpoint": "checkpoint", "mode": "mode", "classes": "classes",
        "batch": "batch", "dropout": "dropout", "epochs": "epochs",
        "seed": "seed", "split": "split",
    }
    for flag, key in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            settings[key] = _SCHEMA[key](value) if isinstance(value, str) else value
    return settings


def _model_config(settings, mode_default="multimodal") -> FusionModelConfig:
    kwargs = {}
    mapping = {
        "classes": "classes", "mode": "mode", "batch": "batch_size",
        "dropout": "dropout", "epochs": "epochs", "seed": "seed",
        "lr": "learning_rate", "optimizer": "optimizer", "split": "split",
        "image_size": "image_size", "channels": "extractor_channels",
        "kernel": "kernel_size", "caps_in": "caps_n_in",
        "caps_in_dim": "caps_d_in", "caps_out": "caps_n_out",
        "caps_out_dim": "caps_d_out", "routing_iters": "routing_iterations",
        "d_img": "d_img", "hidden_dim": "hidden_dim", "head": "head_sizes",
        "location_encoding": "location_encoding", "embedding_dim": "embedding_dim",
        "lam": "lam", "sigma2": "sigma2", "augment_copies": "augment_copies",
    }
    for key, field in mapping.items():
        if key in settings:
            kwargs[field] = settings[key]
    kwargs.setdefault("mode", mode_default)
    return FusionModelConfig(**kwargs)


def _load_bodymap(settings) -> BodyMap:
    if settings.get("bodymap"):
        return BodyMap.load(settings["bodymap"])
    return BodyMap.default()


def _out_dir(settings) -> Path:
    out = Path(settings.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(settings, key):
    if key not in settings or settings[key] in (None, ""):
        raise ConfigError(f"missing required setting --{key}")
    return settings[key]


# -- subcommands ----------------------------------------------------------------


def cmd_ingest(args):
    settings = _merge_settings(args)
    body_map = _load_bodymap(settings)
    records = load_manifest(_require(settings, "manifest"))
    histogram = {}
    simplified = set()
    for r in records:
        histogram[r.label] = histogram.get(r.label, 0) + 1
        simplified.add(body_map.simplify(r.raw_location_id))
    summary = {
        "records": len(records),
        "classes": dict(sorted(histogram.items())),
        "distinct_simplified_locations": len(simplified),
        "bodymap_raw": body_map.raw_count,
        "bodymap_simplified": len(body_map.simplified_ids),
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_train(args):
    settings = _merge_settings(args)
    config = _model_config(settings)
    body_map = _load_bodymap(settings)
    records = load_manifest(_require(settings, "manifest"))
    out = _out_dir(settings)
    log.info("training %s on %d records (classes %s)",
             config.mode, len(records), ",".join(config.classes))
    started = time.perf_counter()
    model, report, rng = train(records, config, body_map)
    log.info("trained in %.1fs, final train accuracy %.4f",
             time.perf_counter() - started, report.final_train_accuracy)

    save_model(model, out / "model.wmck", rng.state)
    report.epochs_csv(out / "epochs.csv")
    (out / "metrics.json").write_text(report.eval_report.to_json() + "\n")
    (out / "report.json").write_text(
        json.dumps(report.summary_dict(), indent=2, sort_keys=True) + "\n")
    print(f"checkpoint: {out / 'model.wmck'}")
    print(f"final_train_accuracy: {report.final_train_accuracy:.6f}")
    print(f"eval_accuracy: {report.eval_report.accuracy:.6f}")
    return EXIT_OK


def cmd_eval(args):
    settings = _merge_settings(args)
    body_map = _load_bodymap(settings)
    model, config, _ = load_model(_require(settings, "checkpoint"), body_map)
    if "classes" in settings:
        alphabet = ("BG", "N", "D", "P", "S", "V")
        unknown = [c for c in settings["classes"] if c not in alphabet]
        if unknown:
            raise ConfigError(f"unknown class token(s) {unknown}")
        wanted = tuple(c for c in alphabet if c in settings["classes"])
        if wanted != config.classes:
            raise ConfigError(f"checkpoint was trained on classes "
                              f"{','.join(config.classes)}, requested "
                              f"{','.join(wanted)}")
    records = load_manifest(_require(settings, "manifest"))
    report = evaluate(model, records, body_map)
    blob = report.to_json()
    if settings.get("out"):
        out = _out_dir(settings)
        (out / "metrics.json").write_text(blob + "\n")
    print(blob)
    return EXIT_OK


def cmd_predict(args):
    settings = _merge_settings(args)
    body_map = _load_bodymap(settings)
    model, config, _ = load_model(_require(settings, "checkpoint"), body_map)
    image = None
    if config.mode != "location_only":
        if not args.image:
            raise ConfigError(f"mode {config.mode} requires --image")
        image = ingest_image(args.image, (config.image_size, config.image_size))
    location = None
    if config.mode != "image_only":
        if args.location is None:
            raise ConfigError(f"mode {config.mode} requires --location")
        location = int(args.location)
    from .tensor import no_grad
    with no_grad():
        probs = model.forward(image=image, location=location)
    result = {
        "classes": list(config.classes),
        "probabilities": [float(p) for p in probs.data],
        "predicted": config.classes[int(np.argmax(probs.data))],
    }
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args):
    seed = args.seed if args.seed is not None else 0
    results = gradchecks.run(args.scope, seed=seed)
    failures = []
    for name, err in results.items():
        status = "PASS" if err <= gradchecks.TOLERANCE else "FAIL"
        print(f"{name:12s} max_rel_err={err:.3e}  {status}")
        if status == "FAIL":
            failures.append(name)
    if failures:
        print(f"gradcheck failed for: {', '.join(failures)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_sweep(args):
    # --batch / --dropout are grids here, not scalar overrides
    batch_flag, dropout_flag = args.batch, args.dropout
    args.batch = args.dropout = None
    settings = _merge_settings(args)
    settings.pop("batch", None)
    settings.pop("dropout", None)
    config = _model_config(settings)
    body_map = _load_bodymap(settings)
    records = load_manifest(_require(settings, "manifest"))
    out = _out_dir(settings)
    try:
        batch_grid = (tuple(int(b) for b in batch_flag.split(","))
                      if batch_flag else DEFAULT_BATCH_GRID)
        dropout_grid = (tuple(float(d) for d in dropout_flag.split(","))
                        if dropout_flag else DEFAULT_DROPOUT_GRID)
    except ValueError as e:
        raise ConfigError(f"bad sweep grid: {e}") from None
    log.info("sweep grid: %d x %d cells", len(batch_grid), len(dropout_grid))
    report = sweep(records, config, body_map,
                   batch_grid=batch_grid, dropout_grid=dropout_grid)
    report.to_csv(out / "sweep.csv")
    print(f"sweep: {out / 'sweep.csv'} ({len(report.cells)} cells, "
          f"{report.n_succeeded} succeeded)")
    best = report.best()
    if best:
        print(f"best: batch={best.batch_size} dropout={best.dropout:g} "
              f"accuracy={best.accuracy:.4f}")
    if report.n_succeeded == 0:
        return EXIT_DATA
    return EXIT_OK


# -- argument parsing --------------------------------------------------------------


def _add_common(p, with_training=True):
    p.add_argument("--manifest", help="manifest CSV path")
    p.add_argument("--bodymap", help=f"body-map CSV (default: bundled 484->"
                                     f"{SIMPLIFIED_LOCATION_COUNT} table)")
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--out", help="output directory (default: .)")
    p.add_argument("--classes", help="comma-separated class subset, e.g. D,P,S,V")
    p.add_argument("--seed", type=int, help="RNG seed (default 0)")
    if with_training:
        p.add_argument("--mode", choices=["image_only", "location_only", "multimodal"])
        p.add_argument("--batch", help="batch size (sweep: comma-separated grid)")
        p.add_argument("--dropout", help="dropout probability (sweep: grid)")
        p.add_argument("--epochs", type=int)
        p.add_argument("--split", type=float, help="train fraction (default 0.8)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="wmc",
        description="Multimodal wound classifier: train, evaluate, and verify.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a manifest against a body map")
    _add_common(p, with_training=False)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("train", help="train a model and write artifacts")
    _add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    _add_common(p, with_training=False)
    p.add_argument("--checkpoint", help="checkpoint path (.wmck)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="classify a single sample")
    _add_common(p, with_training=False)
    p.add_argument("--checkpoint", help="checkpoint path (.wmck)")
    p.add_argument("--image", help="image path (jpeg/png/wimg)")
    p.add_argument("--location", type=int, help="raw body-map location id")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("scope", nargs="?", default="all",
                   help="all or a module name (tensor, sepconv, capsule, "
                        "attention, gmrnn, model)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("sweep", help="batch-size x dropout sensitivity grid")
    _add_common(p)
    p.set_defaults(fn=cmd_sweep)

    return parser


def _setup_logging():
    level = os.environ.get("WMC_LOG", "warning").upper()
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except WmcError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
