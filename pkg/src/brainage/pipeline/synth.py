"""Synthetic cohort: ellipsoidal brain phantoms whose anatomy tracks age.

The phantom is deliberately artificial. Its only purpose is to give the
pipeline a known, learnable age signal at desk scale:

* a "ventricle" ellipsoid at the centre whose radii grow affinely with age,
* a "cortex" shell whose intensity falls affinely with age,
* white-matter filling in between,

plus Gaussian noise (sigma 5) and a random global intensity scale in
[0.8, 1.2] so histogram matching has something to undo.
"""

from __future__ import annotations

import numpy as np

from ..errors import BadRange, UsageError
from ..nifti import Volume

GRID = (91, 109, 91)
AGE_RANGE = (55.0, 96.0)
BRAIN_RADII = (0.40, 0.40, 0.38)  # fraction of each extent
CORTEX_THICKNESS = 0.12  # fraction of the normalized radius
VENTRICLE_RADII = (0.06, 0.13, 0.07)  # normalized radii at age 55
VENTRICLE_GROWTH = 0.022  # relative radius growth per year past 55
WM_INTENSITY = 160.0
CSF_INTENSITY = 40.0
CORTEX_AT_55 = 110.0
CORTEX_SLOPE = -0.8  # intensity units per year
NOISE_SIGMA = 5.0
SCALE_RANGE = (0.8, 1.2)


def _normalized_radius(shape, radii):
    axes = [(np.arange(n) - (n - 1) / 2) / (r * n) for n, r in zip(shape, radii)]
    grids = np.meshgrid(*axes, indexing="ij", sparse=True)
    return np.sqrt(sum(g**2 for g in grids))


def ventricle_mask(age: float, shape=GRID) -> np.ndarray:
    grow = 1.0 + VENTRICLE_GROWTH * (age - AGE_RANGE[0])
    radii = tuple(r * grow for r in VENTRICLE_RADII)
    return _normalized_radius(shape, radii) <= 1.0


def make_phantom(age: float, shape=GRID, rng: np.random.Generator | None = None, noise_sigma: float = NOISE_SIGMA, scale: float = 1.0) -> np.ndarray:
    """One subject's volume as float32; background is exactly zero.

    With ``rng=None`` (or ``noise_sigma=0``) the phantom is noise-free.
    """
    r = _normalized_radius(shape, BRAIN_RADII)
    brain = r <= 1.0
    cortex = brain & (r > 1.0 - CORTEX_THICKNESS)
    vent = ventricle_mask(age, shape) & brain & ~cortex

    data = np.zeros(shape, dtype=np.float64)
    data[brain] = WM_INTENSITY
    data[cortex] = CORTEX_AT_55 + CORTEX_SLOPE * (age - AGE_RANGE[0])
    data[vent] = CSF_INTENSITY
    if rng is not None and noise_sigma > 0:
        data[brain] += rng.normal(0.0, noise_sigma, size=int(brain.sum()))
    data[brain] = np.maximum(data[brain] * scale, 1.0)
    return data.astype(np.float32)


def sample_subject(index: int, seed: int, age_range=AGE_RANGE, shape=GRID, noise_sigma=NOISE_SIGMA):
    """Age and volume of subject ``index``; depends only on ``(seed, index)``."""
    rng = np.random.default_rng([seed, index])
    age = float(rng.uniform(*age_range))
    scale = float(rng.uniform(*SCALE_RANGE))
    return age, Volume(make_phantom(age, shape, rng, noise_sigma, scale))


def check_age_range(age_range):
    lo, hi = age_range
    if not (18 <= lo <= hi <= 120):
        raise BadRange(f"age range must lie within [18, 120], got {age_range}")


def check_count(n):
    if n < 1:
        raise UsageError(f"need at least one subject, got {n}")
