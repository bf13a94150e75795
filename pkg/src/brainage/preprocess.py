"""Intensity preprocessing and slicing.

Voxels that are exactly zero are skull-stripped background. They are left
out of every intensity statistic and stay zero through matching and
scaling.

Ranks use quantile positions: in a foreground of ``N`` sorted values the
``i``-th (0-based) sits at cumulative level ``i / (N - 1)``, the same grid
``np.quantile`` interpolates on. Tied values take the midpoint of the
first and last position they occupy.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, Iterable

import numpy as np

from .errors import (
    AllZeroVolume,
    DataError,
    DegenerateVolume,
    EmptyInput,
    IoFailure,
    KTooLarge,
    TargetTooLarge,
    UsageError,
)
from .nifti import Volume

__all__ = [
    "QuantileTable",
    "Slice",
    "build_reference_histogram",
    "center_crop",
    "empirical_cdf",
    "extract_center_slices",
    "foreground",
    "histogram_match",
    "minmax_normalize",
    "preprocess_volume",
]

DEFAULT_LEVELS = 1000
SLICE_SHAPE = (86, 104)


@dataclass
class QuantileTable:
    """Sampled inverse CDF: ``values[i]`` is the intensity at ``levels[i]``."""

    levels: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.levels.shape != self.values.shape or self.levels.ndim != 1 or self.levels.size < 2:
            raise DataError("quantile table needs two equal-length columns of >= 2 rows")
        if self.levels[0] != 0.0 or self.levels[-1] != 1.0 or np.any(np.diff(self.levels) <= 0):
            raise DataError("levels must increase strictly from 0 to 1")
        if np.any(np.diff(self.values) < 0):
            raise DataError("values must be non-decreasing")

    def __len__(self):
        return self.levels.size

    def interp(self, p):
        return np.interp(p, self.levels, self.values)

    def to_csv(self, path: str | os.PathLike) -> None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["level", "value"])
        for lv, v in zip(self.levels, self.values):
            writer.writerow([repr(float(lv)), repr(float(v))])
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        try:
            tmp.write_text(buf.getvalue())
            os.replace(tmp, path)
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc

    @classmethod
    def from_csv(cls, path: str | os.PathLike) -> "QuantileTable":
        try:
            with open(path, newline="") as fh:
                rows = list(csv.reader(fh))
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc
        if not rows or rows[0] != ["level", "value"]:
            raise DataError(f"{path}: expected header 'level,value'")
        try:
            body = np.array([[float(a), float(b)] for a, b in rows[1:]])
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from exc
        if body.size == 0:
            raise DataError(f"{path}: no rows")
        return cls(body[:, 0], body[:, 1])


@dataclass
class Slice:
    data: np.ndarray
    source_index: int
    subject_id: Hashable = None

    @property
    def shape(self):
        return self.data.shape


def _array(volume) -> np.ndarray:
    return volume.data if isinstance(volume, Volume) else np.asarray(volume, dtype=np.float32)


def foreground(volume) -> np.ndarray:
    """Flat array of the nonzero voxels."""
    data = _array(volume)
    return data[data != 0]


def build_reference_histogram(volumes: Iterable, q: int = DEFAULT_LEVELS) -> QuantileTable:
    """Average the per-volume foreground quantiles at ``q`` evenly spaced levels.

    Volumes are folded in index order so the result does not depend on how
    the per-volume quantiles were computed. Any iterable works, so a
    generator that reads volumes lazily keeps only one in memory.
    """
    if q < 2:
        raise UsageError(f"q must be >= 2, got {q}")
    levels = np.linspace(0.0, 1.0, q)
    total = np.zeros(q, dtype=np.float64)
    count = 0
    for i, vol in enumerate(volumes):
        fg = foreground(vol).astype(np.float64)
        if fg.size == 0:
            raise AllZeroVolume(f"reference volume {i} has no foreground voxels")
        total += np.quantile(fg, levels)
        count += 1
    if count == 0:
        raise EmptyInput("no reference volumes")
    values = np.maximum.accumulate(total / count)
    return QuantileTable(levels, values)


def empirical_cdf(values: np.ndarray) -> np.ndarray:
    """Cumulative level of each element of ``values`` (midpoint for ties)."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    n = flat.size
    if n < 2:
        return np.zeros(n)
    uniq, inverse, counts = np.unique(flat, return_inverse=True, return_counts=True)
    last = np.cumsum(counts) - 1
    first = last - counts + 1
    levels = (first + last) / (2.0 * (n - 1))
    return levels[inverse].reshape(np.shape(values))


def histogram_match(volume: Volume, ref: QuantileTable) -> Volume:
    """Map foreground intensities onto the reference distribution.

    Each foreground voxel ``v`` becomes ``ref.interp(F(v))``, where ``F`` is
    the volume's own empirical CDF. The map is monotone, so intensity order
    is preserved.
    """
    data = _array(volume)
    mask = data != 0
    fg = data[mask]
    if np.unique(fg).size < 2:
        raise DegenerateVolume("histogram matching needs >= 2 distinct foreground values")
    out = np.zeros_like(data, dtype=np.float32)
    out[mask] = ref.interp(empirical_cdf(fg)).astype(np.float32)
    spacing = volume.spacing if isinstance(volume, Volume) else (2.0, 2.0, 2.0)
    return Volume(out, spacing)


def minmax_normalize(volume: Volume) -> Volume:
    """Affinely rescale intensities to span exactly [0, 255].

    Minimum and maximum are taken over the whole volume; exact zeros
    (background) are written back as zero afterwards.
    """
    data = _array(volume)
    lo, hi = float(data.min()), float(data.max())
    if not hi > lo:
        raise DegenerateVolume("min-max scaling needs max > min")
    scale = 255.0 / (hi - lo)
    out = ((data.astype(np.float64) - lo) * scale).astype(np.float32)
    out[data == lo] = 0.0
    out[data == hi] = 255.0
    out[data == 0] = 0.0
    spacing = volume.spacing if isinstance(volume, Volume) else (2.0, 2.0, 2.0)
    return Volume(out, spacing)


def preprocess_volume(volume: Volume, ref: QuantileTable) -> Volume:
    """Histogram matching followed by 0-255 scaling."""
    return minmax_normalize(histogram_match(volume, ref))


def extract_center_slices(volume, k: int = 40, subject_id=None) -> list[Slice]:
    """The ``k`` central axial (x-y) planes in ascending z."""
    data = _array(volume)
    depth = data.shape[2]
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    if k > depth:
        raise KTooLarge(f"k={k} exceeds z extent {depth}")
    start = (depth - k) // 2
    return [Slice(np.ascontiguousarray(data[:, :, z]), z, subject_id) for z in range(start, start + k)]


def center_crop(slc: Slice, rows: int = SLICE_SHAPE[0], cols: int = SLICE_SHAPE[1]) -> Slice:
    r, c = slc.data.shape
    if rows > r or cols > c:
        raise TargetTooLarge(f"cannot crop {r}x{c} to {rows}x{cols}")
    r0, c0 = (r - rows) // 2, (c - cols) // 2
    return Slice(slc.data[r0 : r0 + rows, c0 : c0 + cols].copy(), slc.source_index, slc.subject_id)
