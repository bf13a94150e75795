"""Command-line entry point: ``brainage <subcommand> [flags]``.

Machine-readable results go to stdout as one JSON object; progress and
human-readable messages go to stderr. Exit codes: 0 success, 1 usage
error, 2 data or format error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import BrainAgeError, DataError, IoFailure, NumericError, UsageError
from .models import ModelSpec, predict_subject_sliced, predict_volume_3d
from .nifti import read_nifti
from .pipeline import (
    Checkpoint,
    TrainConfig,
    evaluate_mae,
    export_report,
    generate_synthetic_cohort,
    preprocess_cohort,
    read_manifest,
    reference_from_manifest,
    train_model,
    write_log_csv,
)
from .pipeline.data import subject_slices
from .preprocess import QuantileTable

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CHECKPOINT_NAME = "checkpoint.ckpt"
LOG_NAME = "train_log.csv"
CONFIG_NAME = "config.json"


class _Parser(argparse.ArgumentParser):
    """argparse, but bad arguments raise instead of exiting with status 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _say(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True), flush=True)


def _write_json(path: Path, obj: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


def cmd_synth(args) -> dict:
    out = Path(args.out)
    records = generate_synthetic_cohort(
        args.n, (args.age_min, args.age_max), args.seed, out, train_fraction=args.train_fraction, workers=args.workers
    )
    config = {
        "command": "synth",
        "n": args.n,
        "seed": args.seed,
        "age_range": [args.age_min, args.age_max],
        "train_fraction": args.train_fraction,
    }
    _write_json(out / CONFIG_NAME, config)
    counts = {s: sum(r.split == s for r in records) for s in ("train", "val")}
    _say(f"wrote {len(records)} subjects to {out} ({counts['train']} train / {counts['val']} val)")
    return {"out": str(out), "manifest": str(out / "manifest.csv"), "n": len(records), **counts}


def cmd_hist_ref(args) -> dict:
    records = read_manifest(args.manifest)
    table = reference_from_manifest(records, args.q, args.split)
    table.to_csv(args.out)
    _say(f"reference table with {len(table)} levels from the {args.split} split -> {args.out}")
    return {"out": args.out, "levels": len(table), "min": float(table.values[0]), "max": float(table.values[-1])}


def cmd_preprocess(args) -> dict:
    records = read_manifest(args.manifest)
    ref = QuantileTable.from_csv(args.ref)
    out = Path(args.out)
    done = preprocess_cohort(records, ref, out, workers=args.workers)
    _write_json(out / CONFIG_NAME, {"command": "preprocess", "reference_levels": len(ref)})
    _say(f"preprocessed {len(done)} volumes into {out}")
    return {"out": str(out), "manifest": str(out / "manifest.csv"), "n": len(done)}


def _load_config(args) -> TrainConfig:
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise IoFailure(f"cannot read {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"{args.config} is not valid JSON: {exc}") from exc
        cfg = TrainConfig.from_dict(raw)
        if args.model and ModelSpec.default(args.model).kind != cfg.model.kind:
            raise UsageError(f"--model {args.model} contradicts the config's {cfg.model.kind}")
    elif args.model:
        cfg = TrainConfig.default(args.model)
    else:
        raise UsageError("train needs --config or --model")
    overrides = {}
    for flag, key in (("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "initial_lr"), ("seed", "seed")):
        if getattr(args, flag) is not None:
            overrides[key] = getattr(args, flag)
    return cfg.replace(**overrides) if overrides else cfg


def cmd_train(args) -> dict:
    cfg = _load_config(args)
    records = read_manifest(args.manifest)
    out = Path(args.out)
    _write_json(out / CONFIG_NAME, cfg.to_dict())

    def progress(row):
        _say(f"epoch {row['epoch']:3d}  lr {row['lr']:.3g}  train_loss {row['train_loss']:.3f}  val_mae {row['val_mae']:.3f}")

    ckpt = train_model(records, cfg, workers=args.workers, progress=progress)
    ckpt.save(out / CHECKPOINT_NAME)
    write_log_csv(ckpt.history, out / LOG_NAME)
    _say(f"best epoch {ckpt.header['epoch']} (val MAE {ckpt.header['val_mae']:.3f} years) -> {out / CHECKPOINT_NAME}")
    return {
        "checkpoint": str(out / CHECKPOINT_NAME),
        "log": str(out / LOG_NAME),
        "best_epoch": ckpt.header["epoch"],
        "val_mae": ckpt.header["val_mae"],
        "epochs": len(ckpt.history),
    }


def _slices_per_subject(ckpt: Checkpoint) -> int:
    return int(ckpt.header.get("config", {}).get("slices_per_subject", 40))


def cmd_predict(args) -> dict:
    ckpt = Checkpoint.load(args.checkpoint)
    model = ckpt.model()
    volume = read_nifti(args.volume)
    subject = args.subject_id or Path(args.volume).name.split(".")[0]
    if model.spec.kind == "brainnet3d":
        pred = predict_volume_3d(model, volume, subject)
    else:
        k = _slices_per_subject(ckpt)
        pred = predict_subject_sliced(model, subject_slices(volume, k, subject), k, subject)
    _say(f"{subject}: predicted age {pred.predicted_age:.2f} years")
    result = {"subject_id": subject, "predicted_age": pred.predicted_age, "model_kind": model.spec.kind}
    if pred.slice_predictions is not None:
        result["slice_predictions"] = list(pred.slice_predictions)
    return result


def cmd_eval(args) -> dict:
    ckpt = Checkpoint.load(args.checkpoint)
    records = read_manifest(args.manifest)
    report = evaluate_mae(ckpt, records, args.split, _slices_per_subject(ckpt))
    out = Path(args.out)
    export_report(report, out)
    _write_json(out / CONFIG_NAME, {"command": "eval", "split": args.split, "model": ckpt.header["model"]})
    _say(f"{report.split}: MAE {report.mae_years:.3f} years over {report.n} subjects")
    return {"mae_years": report.mae_years, "n": report.n, "split": report.split, "out": str(out)}


def cmd_report(args) -> dict:
    path = Path(args.eval_dir) / "metrics.json"
    try:
        metrics = json.loads(path.read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from exc
    _say(f"{metrics.get('model_kind', '?')} on {metrics.get('split', '?')}: MAE {metrics['mae_years']:.3f} years, n={metrics['n']}")
    return metrics


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="brainage", description="Brain-age regression pipeline on NIfTI volumes.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic phantom cohort")
    p.add_argument("--n", type=_positive, required=True, help="number of subjects")
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--age-min", type=float, default=55.0)
    p.add_argument("--age-max", type=float, default=96.0)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--workers", type=_positive, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("hist-ref", help="build the reference quantile table")
    p.add_argument("--manifest", required=True)
    p.add_argument("--q", type=int, default=1000, help="number of quantile levels")
    p.add_argument("--split", default="train", choices=("train", "val", "test"))
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_hist_ref)

    p = sub.add_parser("preprocess", help="histogram-match and rescale every volume")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ref", required=True, help="quantile table CSV from hist-ref")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=_positive, default=1)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model; flags override the config file")
    p.add_argument("--config", help="TrainConfig JSON")
    p.add_argument("--model", choices=("brainnet3d", "slicenet2d"), help="use this kind's defaults (no --config)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=_positive)
    p.add_argument("--batch-size", type=_positive)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=_seed)
    p.add_argument("--workers", type=_positive, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict one subject's age")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--volume", required=True)
    p.add_argument("--subject-id")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="val", choices=("train", "val", "test"))
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="print the metrics of an eval directory")
    p.add_argument("--eval-dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _emit(args.func(args))
        return EXIT_OK
    except UsageError as exc:
        _say(f"usage error: {exc}")
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        _say(f"data error: {exc}")
        return EXIT_DATA
    except NumericError as exc:
        _say(f"numeric failure: {exc}")
        return EXIT_NUMERIC
    except BrainAgeError as exc:
        _say(f"error: {exc}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
