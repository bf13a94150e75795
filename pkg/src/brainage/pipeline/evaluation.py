"""Subject-level MAE evaluation and the plot-data export."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import EmptySplit, IoFailure, UsageError
from ..models import Model, SubjectPrediction
from .manifest import SubjectRecord, select
from .training import Checkpoint, predict_records


@dataclass(frozen=True)
class EvalReport:
    """Per-subject predictions on one split and the summaries derived from them.

    ``age_histogram`` holds ``(bin_start, bin_end, count)`` rows of
    1-year bins covering the true ages. ``slice_mae`` is the per-slice
    error of the 2D model, kept as a diagnostic only; it is ``None`` for 3D.
    """

    mae_years: float
    per_subject: tuple[SubjectPrediction, ...]
    age_histogram: tuple[tuple[int, int, int], ...]
    scatter_rows: tuple[tuple[float, float], ...]
    split: str = "test"
    model_kind: str = ""
    slice_mae: float | None = None

    @property
    def n(self) -> int:
        return len(self.per_subject)


def age_histogram(ages: Sequence[float]) -> tuple[tuple[int, int, int], ...]:
    """Counts in ``[b, b + 1)`` bins from ``floor(min)`` through ``floor(max)``."""
    ages = np.asarray(ages, dtype=np.float64)
    if ages.size == 0:
        return ()
    lo, hi = int(math.floor(ages.min())), int(math.floor(ages.max()))
    counts = np.bincount(np.floor(ages).astype(np.int64) - lo, minlength=hi - lo + 1)
    return tuple((lo + i, lo + i + 1, int(c)) for i, c in enumerate(counts))


def report_from_predictions(predictions: Sequence[SubjectPrediction], split: str = "test", model_kind: str = "") -> EvalReport:
    if not predictions:
        raise EmptySplit(f"no subjects in split {split!r}")
    errors = [abs(p.true_age - p.predicted_age) for p in predictions]
    slice_errors = [
        abs(p.true_age - s) for p in predictions if p.slice_predictions is not None for s in p.slice_predictions
    ]
    return EvalReport(
        mae_years=float(np.mean(errors)),
        per_subject=tuple(predictions),
        age_histogram=age_histogram([p.true_age for p in predictions]),
        scatter_rows=tuple((float(p.true_age), float(p.predicted_age)) for p in predictions),
        split=split,
        model_kind=model_kind,
        slice_mae=float(np.mean(slice_errors)) if slice_errors else None,
    )


def evaluate_mae(model: Model | Checkpoint, records: Sequence[SubjectRecord], split: str = "test", k: int = 40) -> EvalReport:
    """Predict every subject of ``split`` in inference mode and summarize.

    2D predictions are always fused to one value per subject before the
    MAE is taken.
    """
    if isinstance(model, Checkpoint):
        model = model.model()
    chosen = select(records, split)
    if not chosen:
        raise EmptySplit(f"no subjects in split {split!r}")
    return report_from_predictions(predict_records(model, chosen, k), split, model.spec.kind)


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _csv(rows, header) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def export_report(report: EvalReport, out_dir) -> None:
    """Write ``age_histogram.csv``, ``scatter.csv`` and ``metrics.json``."""
    if len(report.scatter_rows) != report.n:
        raise UsageError("scatter rows and subjects disagree")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc
    _atomic_write(out / "age_histogram.csv", _csv(report.age_histogram, ["bin_start", "bin_end", "count"]))
    scatter = [(p.subject_id, repr(float(p.true_age)), repr(float(p.predicted_age))) for p in report.per_subject]
    _atomic_write(out / "scatter.csv", _csv(scatter, ["subject_id", "true_age", "predicted_age"]))
    metrics = {"mae_years": report.mae_years, "n": report.n, "split": report.split, "model_kind": report.model_kind}
    if report.slice_mae is not None:
        metrics["slice_mae_years"] = report.slice_mae
    _atomic_write(out / "metrics.json", json.dumps(metrics, indent=2, sort_keys=True) + "\n")
