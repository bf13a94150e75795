"""Subject manifests: CSV bookkeeping and the seeded train/val split."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import DataError, EmptyManifest, IoFailure, UsageError

HEADER = ["subject_id", "age", "volume_path", "split"]
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    age: float
    volume_path: str
    split: str = "train"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DataError(f"{self.subject_id}: split must be one of {SPLITS}, got {self.split!r}")
        if not 18 <= self.age <= 120:
            raise DataError(f"{self.subject_id}: age {self.age} outside [18, 120]")


def _check_unique(records: Sequence[SubjectRecord]) -> None:
    seen = set()
    for r in records:
        if r.subject_id in seen:
            raise DataError(f"duplicate subject_id {r.subject_id!r}")
        seen.add(r.subject_id)


def write_manifest(records: Iterable[SubjectRecord], path) -> None:
    records = list(records)
    _check_unique(records)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    for r in records:
        writer.writerow([r.subject_id, repr(float(r.age)), r.volume_path, r.split])
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(buf.getvalue())
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_manifest(path, check_paths: bool = True) -> list[SubjectRecord]:
    """Read a manifest; relative volume paths are resolved against its directory."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not rows or rows[0] != HEADER:
        raise DataError(f"{path}: header must be {','.join(HEADER)}")
    records = []
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != 4:
            raise DataError(f"{path}:{line}: expected 4 columns, got {len(row)}")
        sid, age, vol, split = row
        try:
            age = float(age)
        except ValueError as exc:
            raise DataError(f"{path}:{line}: bad age {age!r}") from exc
        resolved = vol if os.path.isabs(vol) else str(path.parent / vol)
        if check_paths and not os.path.exists(resolved):
            raise DataError(f"{path}:{line}: volume {resolved} does not exist")
        records.append(SubjectRecord(sid, age, resolved, split))
    _check_unique(records)
    return records


def split_manifest(records: Sequence[SubjectRecord], train_fraction: float = 0.8, seed: int = 0) -> list[SubjectRecord]:
    """Seeded subject-level shuffle; the first ``round(N * fraction)`` go to train, the rest to val.

    Records keep their input order in the output; only the split tag
    changes. Test membership is never assigned here.
    """
    records = list(records)
    if not records:
        raise EmptyManifest("cannot split an empty manifest")
    if not 0 < train_fraction < 1:
        raise UsageError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if any(r.split == "test" for r in records):
        raise UsageError("test subjects come from a separate cohort and cannot be re-split")
    _check_unique(records)
    n_train = int(np.floor(len(records) * train_fraction + 0.5))
    order = np.random.default_rng(seed).permutation(len(records))
    train = set(order[:n_train].tolist())
    return [replace(r, split="train" if i in train else "val") for i, r in enumerate(records)]


def select(records: Sequence[SubjectRecord], split: str) -> list[SubjectRecord]:
    return [r for r in records if r.split == split]
