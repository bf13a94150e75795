"""Turning manifest records into network-ready arrays."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..models import ModelSpec, block_downsample
from ..nifti import read_nifti
from ..preprocess import Slice, center_crop, extract_center_slices
from .manifest import SubjectRecord


def subject_slices(volume, k: int, subject_id=None) -> list[Slice]:
    """The ``k`` central axial slices, centre-cropped to the 2D input size."""
    return [center_crop(s) for s in extract_center_slices(volume, k, subject_id)]


def load_subject(record: SubjectRecord, spec: ModelSpec, k: int = 40):
    """What the inference helpers take: the volume (3D) or its cropped slices (2D)."""
    volume = read_nifti(record.volume_path)
    if spec.kind == "brainnet3d":
        return volume
    return subject_slices(volume, k, record.subject_id)


def sample_arrays(records: Sequence[SubjectRecord], spec: ModelSpec, k: int = 40):
    """Training samples at network resolution, before intensity scaling.

    Returns ``(arrays, ages, owners)``: one array per volume (3D) or per
    slice (2D, ``k`` per subject with the subject's age), and the index of
    the record each sample came from.
    """
    arrays, ages, owners = [], [], []
    for i, record in enumerate(records):
        item = load_subject(record, spec, k)
        parts = [item.data] if spec.kind == "brainnet3d" else [s.data for s in item]
        for data in parts:
            arrays.append(block_downsample(np.asarray(data, dtype=np.float32), spec.input_downsample))
            ages.append(record.age)
            owners.append(i)
    return np.stack(arrays), np.asarray(ages, dtype=np.float64), np.asarray(owners)
