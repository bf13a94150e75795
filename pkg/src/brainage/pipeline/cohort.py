"""Cohort-level steps that touch disk: synthetic generation, reference
histogram, and batch preprocessing."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

from ..errors import IoFailure
from ..nifti import read_nifti, write_nifti
from ..preprocess import QuantileTable, build_reference_histogram, preprocess_volume
from .manifest import SubjectRecord, select, split_manifest, write_manifest
from .synth import AGE_RANGE, GRID, check_age_range, check_count, sample_subject

MANIFEST_NAME = "manifest.csv"


def _mkdir(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {path}: {exc}") from exc


def _relative(path: str, base: Path) -> str:
    return os.path.relpath(path, base)


def generate_synthetic_cohort(
    n: int,
    age_range=AGE_RANGE,
    seed: int = 0,
    out_dir=None,
    shape=GRID,
    train_fraction: float = 0.8,
    workers: int = 1,
) -> list[SubjectRecord]:
    """Write ``n`` phantom subjects as ``sub-XXXX.nii`` plus ``manifest.csv``.

    Subject ``i`` depends only on ``(seed, i)``, so the cohort is
    byte-identical across runs and across worker counts. Subjects are
    split into train/val with :func:`split_manifest` under the same seed.
    The returned records carry absolute volume paths; the manifest stores
    them relative to ``out_dir``.
    """
    check_count(n)
    check_age_range(age_range)
    out = Path(out_dir)
    _mkdir(out)
    width = max(4, len(str(n - 1)))

    def make(i):
        age, vol = sample_subject(i, seed, age_range, shape)
        path = out / f"sub-{i:0{width}d}.nii"
        write_nifti(vol, path)
        return SubjectRecord(f"sub-{i:0{width}d}", age, str(path.resolve()))

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        records = list(pool.map(make, range(n)))
    if n > 1:
        records = split_manifest(records, train_fraction, seed)
    else:
        records = [SubjectRecord(r.subject_id, r.age, r.volume_path, "train") for r in records]
    write_manifest([_with_path(r, _relative(r.volume_path, out.resolve())) for r in records], out / MANIFEST_NAME)
    return records


def _with_path(record: SubjectRecord, path: str) -> SubjectRecord:
    return SubjectRecord(record.subject_id, record.age, path, record.split)


def reference_from_manifest(records: Sequence[SubjectRecord], q: int = 1000, split: str = "train") -> QuantileTable:
    """Quantile table over one split's volumes, read lazily one at a time."""
    chosen = select(records, split)
    return build_reference_histogram((read_nifti(r.volume_path) for r in chosen), q)


def preprocess_cohort(records: Sequence[SubjectRecord], ref: QuantileTable, out_dir, workers: int = 1) -> list[SubjectRecord]:
    """Histogram-match and min-max scale every volume into ``out_dir``.

    Writes one ``<subject_id>.nii`` per subject and a new ``manifest.csv``
    with the same ages and splits pointing at the processed files.
    """
    out = Path(out_dir)
    _mkdir(out)

    def run(record):
        path = out / f"{record.subject_id}.nii"
        write_nifti(preprocess_volume(read_nifti(record.volume_path), ref), path)
        return _with_path(record, str(path.resolve()))

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        done = list(pool.map(run, records))
    write_manifest([_with_path(r, _relative(r.volume_path, out.resolve())) for r in done], out / MANIFEST_NAME)
    return done
