"""Training configuration, the minibatch training loop, and checkpoints.

Every random choice in training (initial weights, epoch shuffles, dropout
masks, augmentation draws) is derived from ``TrainConfig.seed`` plus a
fixed counter, so two runs with the same config and data write identical
checkpoint bytes.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ..augment import AugmentConfig, apply_augmentation
from ..engine import Adam, LrSchedule, backward, decode_checkpoint, encode_checkpoint, lr_at, mse_loss
from ..engine.tensor import Tensor
from ..errors import BadCheckpoint, BadSpec, DivergedLoss, EmptySplit, IoFailure, NonFinite, UsageError
from ..models import Model, ModelSpec, build_model, predict_subject_sliced, predict_volume_3d
from .data import load_subject, sample_arrays
from .manifest import SubjectRecord, select

FORMAT = "brainage-checkpoint/1"
LOG_COLUMNS = ["epoch", "lr", "train_loss", "val_mae", "train_samples"]

DEFAULTS = {
    "slicenet2d": {"epochs": 50, "batch_size": 32, "initial_lr": 1e-4, "augment": False},
    "brainnet3d": {"epochs": 80, "batch_size": 10, "initial_lr": 1e-3, "augment": True},
}


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run.

    ``schedule.total_epochs`` always equals ``epochs``. With
    ``normalize_targets`` the network regresses standardized ages; the
    training-split mean and standard deviation are written into the
    checkpoint's model spec so predictions come back in years.
    """

    model: ModelSpec
    epochs: int
    batch_size: int
    schedule: LrSchedule
    augment: AugmentConfig | None = None
    seed: int = 0
    slices_per_subject: int = 40
    normalize_targets: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise UsageError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise UsageError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.schedule.total_epochs != self.epochs:
            raise UsageError(f"schedule spans {self.schedule.total_epochs} epochs, config trains {self.epochs}")
        if self.slices_per_subject < 1:
            raise UsageError("slices_per_subject must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise UsageError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @classmethod
    def default(cls, kind: str, model: ModelSpec | None = None, **overrides) -> "TrainConfig":
        if kind not in DEFAULTS:
            raise BadSpec(f"unknown model kind {kind!r}")
        d = DEFAULTS[kind]
        base = cls(
            model=model or ModelSpec.default(kind),
            epochs=d["epochs"],
            batch_size=d["batch_size"],
            schedule=LrSchedule(d["initial_lr"], d["epochs"]),
            augment=AugmentConfig() if d["augment"] else None,
        )
        return base.replace(**overrides) if overrides else base

    def replace(self, **changes) -> "TrainConfig":
        """Copy with changes; ``epochs``, ``initial_lr`` and ``lr_floor`` rebuild the schedule."""
        lr = changes.pop("initial_lr", self.schedule.initial_lr)
        floor = changes.pop("lr_floor", self.schedule.floor)
        epochs = changes.get("epochs", self.epochs)
        if "schedule" not in changes:
            changes["schedule"] = LrSchedule(lr, epochs, floor)
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "schedule": {"initial_lr": self.schedule.initial_lr, "floor": self.schedule.floor},
            "augment": None if self.augment is None else self.augment.to_dict(),
            "seed": self.seed,
            "slices_per_subject": self.slices_per_subject,
            "normalize_targets": self.normalize_targets,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        """Inverse of :meth:`to_dict`; missing keys fall back to the model kind's defaults."""
        d = dict(d)
        try:
            model = ModelSpec.from_dict(d.pop("model"))
        except (KeyError, TypeError) as exc:
            raise BadSpec(f"config needs a valid 'model' entry: {exc}") from exc
        overrides = {}
        for key in ("epochs", "batch_size", "seed", "slices_per_subject", "normalize_targets"):
            if key in d:
                overrides[key] = d.pop(key)
        sched = d.pop("schedule", {}) or {}
        if "initial_lr" in sched:
            overrides["initial_lr"] = float(sched["initial_lr"])
        if "floor" in sched:
            overrides["lr_floor"] = float(sched["floor"])
        if "augment" in d:
            aug = d.pop("augment")
            overrides["augment"] = None if aug is None else AugmentConfig.from_dict(aug)
        if d:
            raise BadSpec(f"unknown config keys {sorted(d)}")
        return cls.default(model.kind, model=model, **overrides)


@dataclass
class Checkpoint:
    """A trained model plus the optimizer state and run metadata."""

    header: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        return encode_checkpoint(self.header, self.tensors)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        header, tensors = decode_checkpoint(raw)
        header.pop("tensors", None)
        if header.get("format") != FORMAT or "model" not in header:
            raise BadCheckpoint(f"not a {FORMAT} checkpoint")
        return cls(header, tensors)

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        try:
            tmp.write_bytes(self.to_bytes())
            os.replace(tmp, path)
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            raw = Path(path).read_bytes()
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc
        return cls.from_bytes(raw)

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec.from_dict(self.header["model"])

    @property
    def history(self) -> list[dict]:
        return self.header.get("history", [])

    def model(self) -> Model:
        model = build_model(self.spec, seed=0)
        try:
            model.load_state_dict({name: self.tensors[name] for name in model.params})
        except KeyError as exc:
            raise BadCheckpoint(f"checkpoint lacks parameter {exc}") from exc
        return model


def make_checkpoint(model: Model, optimizer: Adam | None = None, **meta) -> Checkpoint:
    """Pack parameters (and Adam moments, if given) into a :class:`Checkpoint`."""
    header = {
        "format": FORMAT,
        "model": model.spec.to_dict(),
        "layers": model.layers,
        "step": optimizer.t if optimizer else 0,
    }
    tensors = model.state_dict()
    if optimizer is not None:
        s0 = optimizer.states[0]
        header["adam"] = {"beta1": s0.beta1, "beta2": s0.beta2, "epsilon": s0.epsilon}
        for name, state in zip(model.params, optimizer.states):
            tensors[f"adam.m/{name}"] = state.m.copy()
        for name, state in zip(model.params, optimizer.states):
            tensors[f"adam.v/{name}"] = state.v.copy()
    header.update(meta)
    return Checkpoint(header, tensors)


def predict_records(model: Model, records: Sequence[SubjectRecord], k: int = 40, loaded=None) -> list:
    """Subject-level predictions; ``loaded`` may hold pre-read inputs in record order."""
    out = []
    for i, r in enumerate(records):
        item = loaded[i] if loaded is not None else load_subject(r, model.spec, k)
        if model.spec.kind == "brainnet3d":
            out.append(predict_volume_3d(model, item, r.subject_id, r.age))
        else:
            out.append(predict_subject_sliced(model, item, k, r.subject_id, r.age))
    return out


def _mae(predictions) -> float:
    return float(np.mean([abs(p.true_age - p.predicted_age) for p in predictions]))


def write_log_csv(history: Sequence[dict], path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_COLUMNS)
    for row in history:
        writer.writerow([row["epoch"]] + [repr(float(row[c])) for c in LOG_COLUMNS[1:4]] + [row["train_samples"]])
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(buf.getvalue())
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def train_model(records: Sequence[SubjectRecord], cfg: TrainConfig, workers: int = 1, progress=None) -> Checkpoint:
    """Minibatch MSE training with Adam; returns the best-validation-MAE checkpoint.

    The 3D model sees one sample per training subject; the 2D model sees
    every one of each subject's ``slices_per_subject`` central slices as an
    independent sample labelled with the subject's age. Validation is always
    at subject level (median over slices for 2D).

    Parameters
    ----------
    records
        Manifest records; only the ``train`` and ``val`` splits are used.
    cfg
        The run configuration.
    workers
        Threads used to augment a minibatch. Results do not depend on it.
    progress
        Optional callable receiving each epoch's log row.
    """
    train_recs, val_recs = select(records, "train"), select(records, "val")
    if not train_recs:
        raise EmptySplit("manifest has no train subjects")
    if not val_recs:
        raise EmptySplit("manifest has no val subjects")

    spec, k = cfg.model, cfg.slices_per_subject
    arrays, ages, _ = sample_arrays(train_recs, spec, k)
    if cfg.normalize_targets:
        subject_ages = np.array([r.age for r in train_recs])
        std = float(subject_ages.std())
        spec = spec.replace(target_mean=float(subject_ages.mean()), target_std=std if std > 0 else 1.0)
    targets = (ages - spec.target_mean) / spec.target_std
    val_inputs = [load_subject(r, spec, k) for r in val_recs]

    model = build_model(spec, seed=cfg.seed)
    optimizer = Adam(model.parameters())
    scale = np.float32(spec.input_scale)
    n = len(arrays)

    def one_input(epoch, i):
        x = arrays[i]
        if cfg.augment is not None:
            x = apply_augmentation(x, cfg.augment, (cfg.seed, epoch, int(i)))
        return x * scale if scale != 1 else x

    history, best, best_mae = [], None, math.inf
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for epoch in range(cfg.epochs):
            lr = lr_at(cfg.schedule, epoch)
            order = np.random.default_rng([cfg.seed, 1, epoch]).permutation(n)
            total = 0.0
            for b, start in enumerate(range(0, n, cfg.batch_size)):
                idx = order[start : start + cfg.batch_size]
                x = np.stack(list(pool.map(lambda i: one_input(epoch, i), idx)))[:, None]
                optimizer.zero_grad()
                pred = model.forward(Tensor(x), train=True, rng=np.random.default_rng([cfg.seed, 2, epoch, b]))
                loss = mse_loss(pred, targets[idx])
                value = loss.item()
                if not math.isfinite(value):
                    raise DivergedLoss(f"non-finite loss at epoch {epoch}, batch {b}")
                backward(loss)
                optimizer.step(lr)
                total += value * len(idx)
            val_mae = _mae(predict_records(model, val_recs, k, val_inputs))
            if not math.isfinite(val_mae):
                raise NonFinite(f"non-finite validation predictions at epoch {epoch}")
            row = {
                "epoch": epoch,
                "lr": lr,
                "train_loss": total / n * spec.target_std**2,
                "val_mae": val_mae,
                "train_samples": n,
            }
            history.append(row)
            if progress is not None:
                progress(row)
            if val_mae < best_mae:
                best_mae = val_mae
                best = make_checkpoint(model, optimizer, epoch=epoch, val_mae=val_mae)

    best.header["schedule"] = {"initial_lr": cfg.schedule.initial_lr, "total_epochs": cfg.epochs, "floor": cfg.schedule.floor}
    best.header["config"] = cfg.to_dict()
    best.header["history"] = history
    return best
