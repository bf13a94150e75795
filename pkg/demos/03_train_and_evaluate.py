"""
Training a small brain-age model on a phantom cohort
====================================================

A cohort of 120 synthetic subjects is generated, preprocessed and used to
train a narrow 3D network for a few epochs. Ventricle size grows with age
in the phantom, so even a small network gets well below the mean-age
baseline. Takes about a minute on one CPU core.
"""

import tempfile
from pathlib import Path

import numpy as np

from brainage.models import ModelSpec
from brainage.pipeline import (
    TrainConfig,
    evaluate_mae,
    generate_synthetic_cohort,
    preprocess_cohort,
    reference_from_manifest,
    select,
    train_model,
)

root = Path(tempfile.mkdtemp())
raw = generate_synthetic_cohort(120, seed=7, out_dir=root / "raw", train_fraction=0.8)
records = preprocess_cohort(raw, reference_from_manifest(raw, q=200), root / "pre")

train_ages = np.array([r.age for r in select(records, "train")])
val_ages = np.array([r.age for r in select(records, "val")])
print(f"{len(train_ages)} train / {len(val_ages)} val; predicting the train mean gives "
      f"MAE {np.mean(np.abs(val_ages - train_ages.mean())):.2f} years")

# inputs are block-averaged 4x and scaled to [0, 1]
spec = ModelSpec("brainnet3d", (4, 8, 16, 32), head_units=32, input_downsample=4, input_scale=1 / 255)
cfg = TrainConfig.default("brainnet3d", model=spec, epochs=16, augment=None)


def show(row):
    print(f"epoch {row['epoch']:2d}  lr {row['lr']:.2e}  train loss {row['train_loss']:8.2f}  val MAE {row['val_mae']:.2f}")


ckpt = train_model(records, cfg, progress=show)
report = evaluate_mae(ckpt, records, "val")
print(f"best epoch {ckpt.header['epoch']}: val MAE {report.mae_years:.2f} years")

ckpt.save(root / "model.ckpt")
print("checkpoint written to", root / "model.ckpt")
