"""Operator entry point: prepare data, train, sweep parameters, predict.

Subcommands:
  prepare  parse + validate a fingerprint CSV, write the normalized cache
  train    pretrain the autoencoder, fine-tune the classifier, save a model
  sweep    evaluate a model over the kappa/sigma grid (or a single cell)
  predict  estimate building/floor/position for one RSS vector

Option values resolve in precedence order: command-line flag, then config
file (--config, a JSON object), then BFLOC_DATA/BFLOC_MODEL/BFLOC_REPORT
environment variables (paths only), then built-in defaults. The defaults
reproduce the reference training setup, so `train` with nothing but paths
runs the standard pipeline.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import pandas as pd

from .classifier import FingerprintClassifier, fit_classifier
from .dataset import (
    CACHE_MAGIC,
    WAP_COLUMNS,
    build_reference_index,
    compute_stats,
    normalize_rss,
    parse_csv,
    read_cache,
    ref_index_from_text,
    ref_index_to_text,
    samples_from_records,
    split_train_val,
    write_cache,
)
from .errors import (
    BflocError,
    FormatError,
    ParseError,
    SchemaError,
    ValidationError,
)
from .evaluation import (
    SWEEP_KAPPAS,
    SWEEP_SIGMAS,
    best_report,
    evaluate_scores,
    format_report,
    knn_baseline,
    run_sweep,
)
from .labels import LabelCodec
from .localizer import estimate_coordinates

ENV_PATHS = {"data": "BFLOC_DATA", "model": "BFLOC_MODEL", "report": "BFLOC_REPORT"}


@dataclass
class RunConfig:
    """Every tunable of the pipeline with its default value."""

    data: str | None = None
    model: str | None = None
    report: str | None = None
    seed: int = 1
    split_ratio: float = 0.70
    epochs: int = 20
    batch_size: int = 10
    validation_fraction: float = 0.10
    hidden: tuple[int, ...] = (256, 128)
    head_hidden: tuple[int, ...] = (64, 128)
    dropout: float = 0.20
    freeze_encoder: bool = False
    kappa: int = 8
    sigma: float = 0.2
    knn_baseline: int | None = None
    format: str = "markdown"
    parallelism: int = 1
    floor_dbm: float = -110.0
    ceil_dbm: float = 0.0

    def validate(self) -> None:
        if not 0.0 < self.split_ratio < 1.0:
            raise ValidationError(f"split ratio {self.split_ratio} not in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch size must be positive")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValidationError(
                f"validation fraction {self.validation_fraction} not in [0, 1)"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout {self.dropout} not in [0, 1)")
        if self.kappa < 1:
            raise ValidationError(f"kappa {self.kappa} must be >= 1")
        if not 0.0 <= self.sigma <= 1.0:
            raise ValidationError(f"sigma {self.sigma} not in [0, 1]")
        if self.knn_baseline is not None and self.knn_baseline < 1:
            raise ValidationError(f"knn baseline k {self.knn_baseline} must be >= 1")
        if self.format not in ("csv", "markdown"):
            raise ValidationError(f"format {self.format!r} not one of csv, markdown")
        if self.parallelism < 1:
            raise ValidationError(f"parallelism {self.parallelism} must be >= 1")
        if not self.floor_dbm < self.ceil_dbm:
            raise ValidationError(
                f"floor dBm {self.floor_dbm} must be below ceiling {self.ceil_dbm}"
            )


_CONFIG_FIELDS = {f.name for f in fields(RunConfig)}
_TUPLE_FIELDS = {"hidden", "head_hidden"}


def _coerce(key: str, value):
    if key in _TUPLE_FIELDS:
        if not isinstance(value, list) or not all(isinstance(v, int) for v in value):
            raise ValidationError(f"config key {key!r} must be a list of integers")
        return tuple(value)
    return value


def load_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: config must be a JSON object")
    unknown = sorted(set(raw) - _CONFIG_FIELDS)
    if unknown:
        raise ValidationError(f"{path}: unknown config key(s): {', '.join(unknown)}")
    return {key: _coerce(key, value) for key, value in raw.items()}


def resolve_config(args: argparse.Namespace) -> tuple[RunConfig, set[str]]:
    """Layer defaults, env path overrides, config file, and flags.

    Returns the resolved config plus the set of fields the user set
    explicitly (flag or config file), which some commands use to decide
    whether a model file's recorded value should win instead.
    """
    cfg = RunConfig()
    explicit: set[str] = set()
    for field, env in ENV_PATHS.items():
        value = os.environ.get(env)
        if value:
            setattr(cfg, field, value)
    config_path = getattr(args, "config", None)
    if config_path:
        for key, value in load_config_file(config_path).items():
            setattr(cfg, key, value)
            explicit.add(key)
    for field in _CONFIG_FIELDS:
        value = getattr(args, field, None)
        if value is not None:
            setattr(cfg, field, value)
            explicit.add(field)
    cfg.validate()
    return cfg, explicit


def _require(cfg: RunConfig, field: str) -> str:
    value = getattr(cfg, field)
    if not value:
        hint = f"--{field}"
        if field in ENV_PATHS:
            hint += f" or {ENV_PATHS[field]}"
        raise ValidationError(f"no {field} path given (use {hint})")
    return value


def _is_cache(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(len(CACHE_MAGIC)) == CACHE_MAGIC


def _load_samples(path, cfg: RunConfig, model: FingerprintClassifier | None):
    """Load a cache file or a raw CSV.

    Returns (samples, codec, floor_dbm, ceil_dbm). With a model given, its
    codec and normalization bounds are authoritative (a cache that disagrees
    is rejected); without one, a CSV builds a fresh codec over all its
    records.
    """
    if _is_cache(path):
        samples, codec_text, floor_dbm, ceil_dbm = read_cache(path)
        codec = LabelCodec.from_text(codec_text)
        if model is not None:
            if codec != model.codec:
                raise ValidationError(
                    f"{path}: cache codec does not match the model's codec"
                )
            if (floor_dbm, ceil_dbm) != (model.floor_dbm, model.ceil_dbm):
                raise ValidationError(
                    f"{path}: cache normalization [{floor_dbm}, {ceil_dbm}] does "
                    f"not match the model's [{model.floor_dbm}, {model.ceil_dbm}]"
                )
        return samples, codec, floor_dbm, ceil_dbm
    records = parse_csv(path)
    if model is not None:
        codec = model.codec
        floor_dbm, ceil_dbm = model.floor_dbm, model.ceil_dbm
    else:
        codec = LabelCodec.from_records(records)
        floor_dbm, ceil_dbm = cfg.floor_dbm, cfg.ceil_dbm
    samples = samples_from_records(records, codec, floor_dbm, ceil_dbm)
    return samples, codec, floor_dbm, ceil_dbm


# --- subcommands ---------------------------------------------------------------


def cmd_prepare(args: argparse.Namespace) -> int:
    cfg, _ = resolve_config(args)
    data = _require(cfg, "data")
    if args.sha256:
        digest = hashlib.sha256(Path(data).read_bytes()).hexdigest()
        if digest != args.sha256.lower():
            raise ValidationError(
                f"{data}: sha256 {digest} does not match expected {args.sha256.lower()}"
            )
    records = parse_csv(data)
    codec = LabelCodec.from_records(records)
    samples = samples_from_records(records, codec, cfg.floor_dbm, cfg.ceil_dbm)
    out = args.out or data + ".bfds"
    write_cache(out, samples, codec.to_text(), cfg.floor_dbm, cfg.ceil_dbm)
    stats = compute_stats(records)
    print(f"records: {len(records)}")
    print(f"buildings: {stats.n_buildings}")
    print(f"max floors per building: {stats.max_floors}")
    print(f"max locations per floor: {stats.max_locations}")
    print(
        f"output nodes (multi-label): {codec.output_width}, "
        f"(multi-class): {codec.multiclass_width}"
    )
    print(f"cache written: {out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg, _ = resolve_config(args)
    data = _require(cfg, "data")
    model_path = _require(cfg, "model")
    samples, codec, floor_dbm, ceil_dbm = _load_samples(data, cfg, model=None)
    train_samples, val_samples = split_train_val(samples, cfg.split_ratio, cfg.seed)
    print(
        f"split: {len(train_samples)} train / {len(val_samples)} validation "
        f"(ratio {cfg.split_ratio}, seed {cfg.seed})"
    )
    ref_index = build_reference_index(train_samples)

    def progress(stage: str, epoch: int, loss: float) -> None:
        print(f"[{stage}] epoch {epoch}/{cfg.epochs} loss {loss:.6f}")

    model, report = fit_classifier(
        train_samples,
        codec,
        seed=cfg.seed + 1,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        validation_fraction=cfg.validation_fraction,
        hidden=cfg.hidden,
        head_hidden=cfg.head_hidden,
        dropout=cfg.dropout,
        freeze_encoder=cfg.freeze_encoder,
        floor_dbm=floor_dbm,
        ceil_dbm=ceil_dbm,
        on_progress=progress,
    )
    if report.holdout_history:
        print(f"holdout cross-entropy: {report.holdout_history[-1]:.6f}")
    meta = {
        "refindex": ref_index_to_text(ref_index),
        "seed": str(cfg.seed),
        "split_ratio": repr(cfg.split_ratio),
        "epochs": str(cfg.epochs),
        "batch_size": str(cfg.batch_size),
        "validation_fraction": repr(cfg.validation_fraction),
        "dropout": repr(cfg.dropout),
        "hidden": ",".join(str(h) for h in cfg.hidden),
        "head_hidden": ",".join(str(h) for h in cfg.head_hidden),
        "freeze_encoder": "1" if cfg.freeze_encoder else "0",
        "n_train": str(len(train_samples)),
        "n_val": str(len(val_samples)),
    }
    model.save(model_path, meta)
    print(f"model written: {model_path}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg, explicit = resolve_config(args)
    data = _require(cfg, "data")
    model_path = _require(cfg, "model")
    model, meta = FingerprintClassifier.load(model_path)
    if "refindex" not in meta:
        raise FormatError(f"{model_path}: model lacks a reference point index")
    ref_index = ref_index_from_text(meta["refindex"])

    # the model remembers how its training data was split; explicit flags win
    seed = cfg.seed if "seed" in explicit else int(meta.get("seed", cfg.seed))
    ratio = (
        cfg.split_ratio
        if "split_ratio" in explicit
        else float(meta.get("split_ratio", cfg.split_ratio))
    )
    samples, _, _, _ = _load_samples(data, cfg, model)
    train_samples, val_samples = split_train_val(samples, ratio, seed)
    print(
        f"validation: {len(val_samples)} samples "
        f"(ratio {ratio}, seed {seed}, model {model_path})"
    )

    single_cell = ("kappa" in explicit) or ("sigma" in explicit)
    if args.sweep and single_cell:
        raise ValidationError("--sweep and --kappa/--sigma are mutually exclusive")
    if single_cell:
        if "kappa" not in explicit:
            raise ValidationError("--sigma without --kappa names no grid cell")
        if cfg.kappa != 1 and "sigma" not in explicit:
            raise ValidationError("--kappa needs --sigma (unless kappa is 1)")
        features = np.stack([s.features for s in val_samples])
        results = [
            evaluate_scores(
                model.predict_scores(features),
                val_samples,
                model.codec,
                ref_index,
                cfg.kappa,
                0.0 if cfg.kappa == 1 else cfg.sigma,
                record_sigma=None if cfg.kappa == 1 else cfg.sigma,
            )
        ]
    else:
        results = run_sweep(
            model,
            val_samples,
            ref_index,
            SWEEP_KAPPAS,
            SWEEP_SIGMAS,
            parallelism=cfg.parallelism,
        )

    table = format_report(results, cfg.format)
    print(table, end="")
    best = best_report(results)
    sigma_text = "N/A" if best.sigma is None else f"{best.sigma:.1f}"
    best_line = (
        f"best: kappa={best.kappa} sigma={sigma_text} "
        f"success {best.success_rate:.2f}% "
        f"centroid {best.error_centroid:.2f} m weighted {best.error_weighted:.2f} m"
    )
    print(best_line)
    knn_line = None
    if cfg.knn_baseline is not None:
        knn = knn_baseline(train_samples, val_samples, cfg.knn_baseline)
        knn_line = (
            f"knn baseline (k={knn.k}): building {knn.building_hit_rate:.2f}% "
            f"floor {knn.floor_hit_rate:.2f}% success {knn.success_rate:.2f}% "
            f"error {knn.position_error:.2f} m"
        )
        print(knn_line)
    if cfg.report:
        text = table
        if cfg.format == "markdown":
            text += "\n" + best_line + "\n"
            if knn_line:
                text += knn_line + "\n"
        Path(cfg.report).write_text(text, encoding="utf-8")
        print(f"report written: {cfg.report}")
    return 0


def _read_rss_argument(arg: str, expected: int) -> np.ndarray:
    """Accept a CSV file with one data row, or an inline comma list."""
    path = Path(arg)
    try:
        is_file = path.exists()
    except OSError:
        # a full inline vector is far longer than any legal file name
        is_file = False
    if is_file:
        frame = pd.read_csv(path)
        missing = [c for c in WAP_COLUMNS if c not in frame.columns]
        if missing:
            raise SchemaError(f"{arg}: missing RSS column(s), first {missing[0]}")
        if len(frame) != 1:
            raise ValidationError(f"{arg}: expected exactly 1 data row, got {len(frame)}")
        values = frame[list(WAP_COLUMNS)].to_numpy(np.float64)[0]
    else:
        parts = arg.split(",")
        if len(parts) != expected:
            raise ValidationError(
                f"RSS vector has {len(parts)} values, expected {expected}"
            )
        try:
            values = np.array([float(p) for p in parts], dtype=np.float64)
        except ValueError:
            raise ParseError("RSS vector contains a non-numeric value") from None
    if not np.isfinite(values).all():
        raise ValidationError("RSS vector contains a non-finite value")
    if values.shape[0] != expected:
        raise ValidationError(
            f"RSS vector has {values.shape[0]} values, expected {expected}"
        )
    return values


def cmd_predict(args: argparse.Namespace) -> int:
    cfg, _ = resolve_config(args)
    model_path = _require(cfg, "model")
    model, meta = FingerprintClassifier.load(model_path)
    if "refindex" not in meta:
        raise FormatError(f"{model_path}: model lacks a reference point index")
    ref_index = ref_index_from_text(meta["refindex"])
    rss = _read_rss_argument(args.rss, model.net.in_dim)
    features = normalize_rss(rss, model.floor_dbm, model.ceil_dbm)
    scores = model.predict_scores(features[None, :])[0]
    building_scores, floor_scores, location_scores = model.codec.segments(scores)
    b_hat = int(np.argmax(building_scores))
    f_hat = int(np.argmax(floor_scores))
    estimate = estimate_coordinates(
        location_scores, b_hat, f_hat, ref_index, cfg.kappa, cfg.sigma
    )
    print(f"building: {model.codec.buildings[b_hat]}")
    print(f"floor: {model.codec.floors[b_hat][f_hat]}")
    print(f"centroid: {estimate.centroid[0]:.2f} {estimate.centroid[1]:.2f}")
    print(f"weighted: {estimate.weighted[0]:.2f} {estimate.weighted[1]:.2f}")
    if estimate.fallback:
        print("note: no candidate cleared the filters; floor-centroid fallback used")
    return 0


# --- argument parsing ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bfloc",
        description="Multi-building/multi-floor Wi-Fi fingerprint localization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--data", help="fingerprint CSV or prepared cache")
        p.add_argument("--seed", type=int, help="base RNG seed (default 1)")

    p = sub.add_parser("prepare", help="validate a CSV and write the cache")
    common(p)
    p.add_argument("--out", help="cache output path (default: DATA.bfds)")
    p.add_argument("--sha256", help="expected hex digest of the CSV")
    p.add_argument("--floor-dbm", dest="floor_dbm", type=float)
    p.add_argument("--ceil-dbm", dest="ceil_dbm", type=float)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train and save a localization model")
    common(p)
    p.add_argument("--model", help="model output path")
    p.add_argument("--split-ratio", dest="split_ratio", type=float,
                   help="training share of the outer split (default 0.70)")
    p.add_argument("--epochs", type=int, help="epochs per stage (default 20)")
    p.add_argument("--batch-size", dest="batch_size", type=int,
                   help="mini-batch size (default 10)")
    p.add_argument("--freeze-encoder", dest="freeze_encoder", action="store_true",
                   default=None, help="do not fine-tune the pretrained encoder")
    p.add_argument("--floor-dbm", dest="floor_dbm", type=float)
    p.add_argument("--ceil-dbm", dest="ceil_dbm", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="evaluate a model over the kappa/sigma grid")
    common(p)
    p.add_argument("--model", help="trained model path")
    p.add_argument("--report", help="write the table to this file")
    p.add_argument("--split-ratio", dest="split_ratio", type=float,
                   help="outer split ratio (default: the model's)")
    p.add_argument("--kappa", type=int, help="evaluate a single cell: kappa")
    p.add_argument("--sigma", type=float, help="evaluate a single cell: sigma")
    p.add_argument("--sweep", action="store_true", default=None,
                   help="run the full grid (the default)")
    p.add_argument("--knn-baseline", dest="knn_baseline", type=int, metavar="K",
                   help="also run a k-nearest-neighbor baseline")
    p.add_argument("--format", choices=("csv", "markdown"))
    p.add_argument("--parallelism", type=int, help="threads for grid cells")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("predict", help="one-shot estimate for a single RSS vector")
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--model", help="trained model path")
    p.add_argument("--kappa", type=int, help="candidate count (default 8)")
    p.add_argument("--sigma", type=float, help="score threshold factor (default 0.2)")
    p.add_argument("rss", help="CSV file with one row, or 520 comma-separated dBm values")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BflocError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
