"""
Random augmentation of a training volume
========================================

Each draw is a pure function of ``(config seed, draw key)``, so the same
key always yields the same transformed volume.
"""

import numpy as np

from brainage.augment import AugmentConfig, apply_augmentation, sample_params
from brainage.pipeline.synth import sample_subject
from brainage.preprocess import minmax_normalize

_, vol = sample_subject(0, seed=3)
x = minmax_normalize(vol).data

cfg = AugmentConfig(seed=5)
rng = np.random.default_rng(0)
for _ in range(3):
    p = sample_params(3, cfg, rng)
    print(f"delta {p.delta:+6.2f}  contrast {p.factor:.3f}  rotation {p.rotation_deg:+6.2f} deg  zoom {p.zoom:.3f}  flips {p.flips}")

# the same key reproduces the same output; a different key does not
a = apply_augmentation(x, cfg, draw=(0, 7))
b = apply_augmentation(x, cfg, draw=(0, 7))
c = apply_augmentation(x, cfg, draw=(0, 8))
print("same key identical:", np.array_equal(a, b), " different key identical:", np.array_equal(a, c))
print(f"output stays in [0, 255]: [{a.min():.1f}, {a.max():.1f}]")

# the identity configuration leaves the data untouched
print("identity exact:", np.array_equal(apply_augmentation(x, AugmentConfig.identity(), 0), x))
