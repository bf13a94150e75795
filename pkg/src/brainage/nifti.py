"""Single-file NIfTI-1 reader and writer.

Only the ``n+1`` single-file variant is handled, optionally wrapped in gzip on
read. Voxels are always returned as float32 arrays indexed ``(x, y, z)``.
Orientation fields (qform/sform) are not interpreted; the raw header bytes
are kept on :class:`NiftiHeader` for callers that need them.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadHeader,
    BadMagic,
    IoFailure,
    NonFinite,
    Truncated,
    UnsupportedDatatype,
)

__all__ = [
    "DATATYPES",
    "NiftiHeader",
    "Volume",
    "parse_nifti",
    "nifti_bytes",
    "read_nifti",
    "write_nifti",
]

HEADER_SIZE = 348
DEFAULT_VOX_OFFSET = 352
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"

# datatype code -> (numpy kind, bitpix)
DATATYPES = {
    2: ("u1", 8),
    4: ("i2", 16),
    8: ("i4", 32),
    16: ("f4", 32),
    64: ("f8", 64),
}


@dataclass
class NiftiHeader:
    sizeof_hdr: int
    dim: tuple[int, ...]
    datatype: int
    bitpix: int
    pixdim: tuple[float, ...]
    vox_offset: float
    scl_slope: float
    scl_inter: float
    magic: bytes
    byteorder: str = "<"
    raw: bytes = field(default=b"", repr=False)

    @property
    def shape(self) -> tuple[int, int, int]:
        rank = self.dim[0]
        extents = list(self.dim[1 : rank + 1]) + [1] * (3 - rank)
        return tuple(extents[:3])


@dataclass
class Volume:
    """A 3D float32 grid with voxel spacing in millimetres."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (2.0, 2.0, 2.0)
    intensity_range: tuple[float, float] | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise BadHeader(f"volume must be 3D, got shape {self.data.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise BadHeader(f"spacing must be 3 positive reals, got {self.spacing}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def range(self) -> tuple[float, float]:
        if self.intensity_range is None:
            self.intensity_range = (float(self.data.min()), float(self.data.max()))
        return self.intensity_range

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )


def _detect_byteorder(raw: bytes) -> str:
    for order in ("<", ">"):
        if struct.unpack(order + "i", raw[:4])[0] == HEADER_SIZE:
            return order
    raise BadMagic("sizeof_hdr is not 348 in either byte order")


def _parse_header(raw: bytes) -> NiftiHeader:
    if len(raw) < HEADER_SIZE:
        raise Truncated(f"need {HEADER_SIZE} header bytes, got {len(raw)}")
    bo = _detect_byteorder(raw)
    magic = raw[344:348]
    if magic != MAGIC_SINGLE:
        raise BadMagic(f"unsupported magic {magic!r}; only single-file n+1 is read")
    dim = struct.unpack(bo + "8h", raw[40:56])
    datatype, bitpix = struct.unpack(bo + "hh", raw[70:74])
    pixdim = struct.unpack(bo + "8f", raw[76:108])
    vox_offset, scl_slope, scl_inter = struct.unpack(bo + "3f", raw[108:120])
    hdr = NiftiHeader(
        sizeof_hdr=HEADER_SIZE,
        dim=dim,
        datatype=datatype,
        bitpix=bitpix,
        pixdim=pixdim,
        vox_offset=vox_offset,
        scl_slope=scl_slope,
        scl_inter=scl_inter,
        magic=magic,
        byteorder=bo,
        raw=bytes(raw[:HEADER_SIZE]),
    )
    if not 1 <= dim[0] <= 7:
        raise BadHeader(f"dim[0] must be in 1..7, got {dim[0]}")
    if any(d < 1 for d in dim[1 : dim[0] + 1]):
        raise BadHeader(f"non-positive extent in dim {dim}")
    if dim[0] > 3 and any(d != 1 for d in dim[4 : dim[0] + 1]):
        raise BadHeader(f"only 3D volumes are supported, dim={dim}")
    if datatype not in DATATYPES:
        raise UnsupportedDatatype(f"datatype code {datatype}")
    if DATATYPES[datatype][1] != bitpix:
        raise BadHeader(f"bitpix {bitpix} inconsistent with datatype {datatype}")
    if not np.isfinite(vox_offset) or vox_offset < DEFAULT_VOX_OFFSET:
        raise BadHeader(f"vox_offset must be >= 352, got {vox_offset}")
    return hdr


def parse_nifti(raw: bytes) -> tuple[NiftiHeader, Volume]:
    """Decode a single-file NIfTI-1 byte stream.

    Parameters
    ----------
    raw : bytes
        Complete file contents. A gzip stream (``1f 8b`` prefix) is
        decompressed first.

    Returns
    -------
    header : NiftiHeader
    volume : Volume
        Voxels as float32, with ``scl_slope``/``scl_inter`` applied when the
        slope is nonzero.
    """
    raw = bytes(raw)
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise Truncated(f"corrupt gzip stream: {exc}") from exc
    hdr = _parse_header(raw)
    shape = hdr.shape
    kind, bitpix = DATATYPES[hdr.datatype]
    start = int(hdr.vox_offset)
    nbytes = int(np.prod(shape)) * bitpix // 8
    if len(raw) < start + nbytes:
        raise Truncated(f"header promises {nbytes} data bytes at offset {start}, file has {len(raw) - start}")
    stored = np.frombuffer(raw, dtype=np.dtype(hdr.byteorder + kind), count=int(np.prod(shape)), offset=start)

    slope, inter = hdr.scl_slope, hdr.scl_inter
    if slope != 0 and not np.isfinite(slope):
        raise NonFinite(f"scl_slope {slope}")
    if slope != 0 and not (slope == 1 and inter == 0):
        values = (stored.astype(np.float64) * slope + inter).astype(np.float32)
    else:
        values = stored.astype(np.float32)
    if not np.all(np.isfinite(values)):
        raise NonFinite("volume contains NaN or Inf voxels")
    data = values.reshape(shape, order="F")
    spacing = tuple(abs(float(p)) or 1.0 for p in hdr.pixdim[1:4])
    return hdr, Volume(np.ascontiguousarray(data), spacing)


def nifti_bytes(volume: Volume, byteorder: str = "<", datatype: int = 16, scl_slope: float = 1.0, scl_inter: float = 0.0) -> bytes:
    """Encode a volume as single-file NIfTI-1.

    ``write_nifti`` uses the defaults (little-endian float32). The other
    combinations exist so tests can produce big-endian and integer-typed
    files; for integer codes the voxel data is stored as
    ``round((v - scl_inter) / scl_slope)``.
    """
    if datatype not in DATATYPES:
        raise UnsupportedDatatype(f"datatype code {datatype}")
    kind, bitpix = DATATYPES[datatype]
    data = np.asarray(volume.data)
    if not np.all(np.isfinite(data)):
        raise NonFinite("refusing to write non-finite voxels")

    hdr = bytearray(DEFAULT_VOX_OFFSET)
    bo = byteorder
    struct.pack_into(bo + "i", hdr, 0, HEADER_SIZE)
    dim = (3, *data.shape, 1, 1, 1, 1)
    struct.pack_into(bo + "8h", hdr, 40, *dim)
    struct.pack_into(bo + "hh", hdr, 70, datatype, bitpix)
    struct.pack_into(bo + "8f", hdr, 76, 1.0, *volume.spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into(bo + "3f", hdr, 108, float(DEFAULT_VOX_OFFSET), scl_slope, scl_inter)
    # xyzt_units: mm
    hdr[123] = 2
    hdr[344:348] = MAGIC_SINGLE

    if kind.startswith("f") and scl_slope == 1 and scl_inter == 0:
        stored = data
    else:
        stored = np.rint((data.astype(np.float64) - scl_inter) / scl_slope)
    payload = np.asarray(stored).astype(np.dtype(bo + kind)).tobytes(order="F")
    return bytes(hdr) + payload


def write_nifti(volume: Volume, path: str | os.PathLike) -> None:
    """Write ``volume`` as little-endian float32 NIfTI-1 (never compressed)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(nifti_bytes(volume))
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_nifti(path: str | os.PathLike) -> Volume:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return parse_nifti(raw)[1]
