"""Binary checkpoint container.

Layout::

    b"CXA1"
    uint32 little-endian   length of the JSON header in bytes
    JSON header            UTF-8, sorted keys; must list "tensors" as
                           [{"name": str, "shape": [int, ...]}, ...]
    payload                each tensor as little-endian float32, C order,
                           in the order of header["tensors"]
"""

from __future__ import annotations

import json
import math
import os
import struct
from pathlib import Path

import numpy as np

from ..errors import BadCheckpoint, IoFailure

MAGIC = b"CXA1"

__all__ = ["MAGIC", "decode_checkpoint", "encode_checkpoint", "read_checkpoint", "write_checkpoint"]


def encode_checkpoint(header: dict, tensors: dict[str, np.ndarray]) -> bytes:
    """Serialize ``tensors`` (insertion order kept) with ``header`` metadata."""
    header = dict(header)
    header["tensors"] = [{"name": name, "shape": list(arr.shape)} for name, arr in tensors.items()]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in tensors.values())
    return MAGIC + struct.pack("<I", len(blob)) + blob + payload


def decode_checkpoint(raw: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if raw[:4] != MAGIC:
        raise BadCheckpoint("not a checkpoint (bad magic)")
    if len(raw) < 8:
        raise BadCheckpoint("truncated checkpoint header")
    (size,) = struct.unpack("<I", raw[4:8])
    try:
        header = json.loads(raw[8 : 8 + size].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadCheckpoint(f"corrupt checkpoint header: {exc}") from exc
    offset = 8 + size
    tensors = {}
    for entry in header.get("tensors", []):
        shape = tuple(entry["shape"])
        count = math.prod(shape)
        end = offset + 4 * count
        if end > len(raw):
            raise BadCheckpoint(f"payload truncated at tensor {entry['name']!r}")
        tensors[entry["name"]] = np.frombuffer(raw[offset:end], dtype="<f4").reshape(shape).astype(np.float32)
        offset = end
    if offset != len(raw):
        raise BadCheckpoint(f"{len(raw) - offset} trailing bytes after payload")
    return header, tensors


def write_checkpoint(path, header: dict, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(encode_checkpoint(header, tensors))
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return decode_checkpoint(raw)
