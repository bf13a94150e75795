"""Training-time augmentation for single volumes and slices.

All transforms take a spatial array (``(x, y, z)`` volume or ``(rows, cols)``
slice) in the 0-255 intensity range and return a new array of the same
shape. Randomness only enters through :func:`apply_augmentation`, which
derives its generator from ``(cfg.seed, draw)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .errors import BadAxis, UsageError

__all__ = [
    "AugmentConfig",
    "AugmentParams",
    "adjust_brightness_contrast",
    "affine_resample",
    "apply_augmentation",
    "flip",
    "sample_params",
]

INTENSITY_MAX = 255.0


@dataclass(frozen=True)
class AugmentConfig:
    brightness_delta_max: float = 10.0
    contrast_factor_range: tuple[float, float] = (0.9, 1.1)
    rotation_max_deg: float = 10.0
    zoom_range: tuple[float, float] = (0.9, 1.1)
    translation_max: int = 3
    flip_probability: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "contrast_factor_range", tuple(self.contrast_factor_range))
        object.__setattr__(self, "zoom_range", tuple(self.zoom_range))
        lo, hi = self.contrast_factor_range
        if not (0 < lo <= 1.0 <= hi):
            raise UsageError(f"contrast_factor_range must be positive and contain 1, got {self.contrast_factor_range}")
        lo, hi = self.zoom_range
        if not (0 < lo <= 1.0 <= hi):
            raise UsageError(f"zoom_range must be positive and contain 1, got {self.zoom_range}")
        if self.rotation_max_deg < 0 or self.brightness_delta_max < 0 or self.translation_max < 0:
            raise UsageError("rotation, brightness and translation bounds must be >= 0")
        if not 0 <= self.flip_probability <= 1:
            raise UsageError(f"flip_probability must be in [0, 1], got {self.flip_probability}")

    @classmethod
    def identity(cls, seed: int = 0) -> "AugmentConfig":
        return cls(0.0, (1.0, 1.0), 0.0, (1.0, 1.0), 0, 0.0, seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["contrast_factor_range"] = list(self.contrast_factor_range)
        d["zoom_range"] = list(self.zoom_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        return cls(**d)


@dataclass(frozen=True)
class AugmentParams:
    """One concrete draw of every transform parameter."""

    delta: float
    factor: float
    flips: tuple[bool, ...]
    rotation_deg: float
    zoom: float
    translation: tuple[int, ...]


def adjust_brightness_contrast(data: np.ndarray, delta: float, factor: float) -> np.ndarray:
    """Scale contrast about the foreground mean, shift by ``delta``, clamp to [0, 255].

    Written as ``x * factor + offset`` so that ``factor=1, delta=0`` is exact.
    """
    if not factor > 0:
        raise UsageError(f"contrast factor must be > 0, got {factor}")
    data = np.asarray(data)
    fg = data[data != 0]
    mean = float(fg.mean(dtype=np.float64)) if fg.size else 0.0
    offset = mean * (1.0 - factor) + delta
    out = data * data.dtype.type(factor) + data.dtype.type(offset)
    return np.clip(out, 0, INTENSITY_MAX).astype(data.dtype, copy=False)


def flip(data: np.ndarray, axis: int) -> np.ndarray:
    data = np.asarray(data)
    if not 0 <= axis < data.ndim:
        raise BadAxis(f"axis {axis} is not a spatial axis of a {data.ndim}D array")
    return np.ascontiguousarray(np.flip(data, axis=axis))


def _affine_matrix(ndim: int, rotation_deg: float, zoom: float) -> np.ndarray:
    """Output-to-input linear map: inverse zoom times inverse rotation in axes (0, 1)."""
    theta = np.deg2rad(rotation_deg)
    c, s = np.cos(theta), np.sin(theta)
    rot_inv = np.eye(ndim)
    rot_inv[0, 0], rot_inv[0, 1], rot_inv[1, 0], rot_inv[1, 1] = c, s, -s, c
    return rot_inv / zoom


def affine_resample(data: np.ndarray, rotation_deg: float = 0.0, zoom: float = 1.0, translation=None) -> np.ndarray:
    """Rotate (axial plane), zoom and translate about the grid centre.

    Output voxel ``o`` reads the input at ``centre + A @ (o - centre - t)``
    where ``A`` undoes the rotation and zoom, with (bi/tri)linear
    interpolation and zeros outside the grid. ``zoom > 1`` magnifies.
    """
    data = np.asarray(data)
    if not zoom > 0:
        raise UsageError(f"zoom must be > 0, got {zoom}")
    if data.ndim < 2:
        raise BadAxis("affine_resample needs at least two spatial axes")
    t = np.zeros(data.ndim) if translation is None else np.asarray(translation, dtype=np.float64)
    if t.shape != (data.ndim,):
        raise UsageError(f"translation needs {data.ndim} components, got {t.shape}")
    if rotation_deg == 0 and zoom == 1 and not np.any(t):
        return data.copy()
    centre = (np.asarray(data.shape, dtype=np.float64) - 1) / 2
    matrix = _affine_matrix(data.ndim, rotation_deg, zoom)
    offset = centre - matrix @ (centre + t)
    out = ndimage.affine_transform(
        data.astype(np.float64), matrix, offset=offset, order=1, mode="grid-constant", cval=0.0, prefilter=False
    )
    return out.astype(data.dtype)


def _generator(seed: int, draw) -> np.random.Generator:
    if isinstance(draw, np.random.Generator):
        return draw
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    key += [int(d) for d in (draw if isinstance(draw, (tuple, list)) else [draw])]
    return np.random.default_rng(key)


def sample_params(ndim: int, cfg: AugmentConfig, rng: np.random.Generator) -> AugmentParams:
    """Draw every parameter in a fixed order (so the stream is stable)."""
    delta = rng.uniform(-cfg.brightness_delta_max, cfg.brightness_delta_max)
    factor = rng.uniform(*cfg.contrast_factor_range)
    flips = tuple(bool(f) for f in rng.random(2) < cfg.flip_probability)
    rotation = rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg)
    zoom = rng.uniform(*cfg.zoom_range)
    translation = tuple(int(v) for v in rng.integers(-cfg.translation_max, cfg.translation_max + 1, size=ndim))
    return AugmentParams(float(delta), float(factor), flips, float(rotation), float(zoom), translation)


def apply_params(data: np.ndarray, p: AugmentParams) -> np.ndarray:
    out = adjust_brightness_contrast(data, p.delta, p.factor)
    for axis, do in enumerate(p.flips):
        if do:
            out = flip(out, axis)
    return affine_resample(out, p.rotation_deg, p.zoom, p.translation)


def apply_augmentation(data: np.ndarray, cfg: AugmentConfig, draw=0) -> np.ndarray:
    """Brightness/contrast, then flips of axes 0 and 1, then the affine warp.

    ``draw`` is a counter (int or tuple of ints) combined with ``cfg.seed``
    to seed the parameter draw, so the result is a pure function of
    ``(data, cfg, draw)``. A ``numpy.random.Generator`` is also accepted.
    """
    data = np.asarray(data)
    rng = _generator(cfg.seed, draw)
    return apply_params(data, sample_params(data.ndim, cfg, rng))
