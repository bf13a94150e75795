"""The two brain-age networks and subject-level inference.

``brainnet3d`` regresses age from the whole registered volume.
``slicenet2d`` regresses age from one axial slice; a subject's age is the
median over its central slices.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Hashable, Sequence

import numpy as np

from .engine import Tensor, conv, dense, dropout, global_avg_pool, maxpool, relu
from .errors import BadSpec, ShapeMismatch, WrongSliceCount
from .nifti import Volume
from .preprocess import Slice

__all__ = [
    "Model",
    "ModelSpec",
    "SubjectPrediction",
    "block_downsample",
    "build_brainnet3d",
    "build_model",
    "build_slicenet2d",
    "median_fusion",
    "predict_subject_sliced",
    "predict_volume_3d",
]

KINDS = ("brainnet3d", "slicenet2d")
DEFAULT_INPUT = {"brainnet3d": (91, 109, 91), "slicenet2d": (86, 104)}
DEFAULT_HEAD = {"brainnet3d": 128, "slicenet2d": 1024}


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of either network.

    ``input_shape`` is the shape the network sees, after the optional
    ``input_downsample`` block averaging. ``input_scale`` multiplies
    intensities on the way in, and ``target_mean``/``target_std`` map the
    raw network output back to years.
    """

    kind: str
    block_filters: tuple[int, ...] = (16, 32, 64, 128)
    head_units: int | None = None
    dropout_p: float = 0.5
    input_shape: tuple[int, ...] | None = None
    kernel_size: int = 3
    convs_per_block: int = 2
    input_downsample: int = 1
    input_scale: float = 1.0
    target_mean: float = 0.0
    target_std: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise BadSpec(f"unknown model kind {self.kind!r}")
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("block_filters", tuple(int(f) for f in self.block_filters))
        if self.head_units is None:
            set_("head_units", DEFAULT_HEAD[self.kind])
        if self.input_shape is None:
            full = DEFAULT_INPUT[self.kind]
            set_("input_shape", tuple(s // self.input_downsample for s in full))
        set_("input_shape", tuple(int(s) for s in self.input_shape))

        if not self.block_filters or self.block_filters[0] < 1:
            raise BadSpec("block_filters must be a nonempty list of positive widths")
        if any(b != 2 * a for a, b in zip(self.block_filters, self.block_filters[1:])):
            raise BadSpec(f"block_filters must double block to block, got {self.block_filters}")
        if not 0 <= self.dropout_p < 1:
            raise BadSpec(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.head_units < 1 or self.convs_per_block < 1:
            raise BadSpec("head_units and convs_per_block must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise BadSpec(f"kernel_size must be odd, got {self.kernel_size}")
        if len(self.input_shape) != self.rank:
            raise BadSpec(f"{self.kind} needs a {self.rank}D input_shape, got {self.input_shape}")
        smallest = 2 ** len(self.block_filters)
        if min(self.input_shape) < smallest:
            raise BadSpec(f"input_shape {self.input_shape} vanishes after {len(self.block_filters)} poolings")
        if self.input_downsample < 1 or not self.target_std > 0:
            raise BadSpec("input_downsample must be >= 1 and target_std > 0")

    @property
    def rank(self) -> int:
        return 3 if self.kind == "brainnet3d" else 2

    @classmethod
    def default(cls, kind: str, **overrides) -> "ModelSpec":
        return cls(kind=kind, **overrides)

    def replace(self, **changes) -> "ModelSpec":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block_filters"] = list(self.block_filters)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        for key in ("block_filters", "input_shape"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class SubjectPrediction:
    subject_id: Hashable
    predicted_age: float
    slice_predictions: tuple[float, ...] | None = None
    true_age: float | None = None


def _layer_plan(spec: ModelSpec) -> list[dict]:
    plan = []
    channels = 1
    for b, filters in enumerate(spec.block_filters, start=1):
        for k in range(1, spec.convs_per_block + 1):
            plan.append({"type": "conv", "name": f"block{b}.conv{k}", "in": channels, "out": filters})
            plan.append({"type": "relu"})
            channels = filters
        plan.append({"type": "maxpool", "name": f"block{b}.pool"})
    plan.append({"type": "gap"})
    plan.append({"type": "dense", "name": "head.dense", "in": channels, "out": spec.head_units})
    if spec.kind == "brainnet3d":
        plan.append({"type": "relu"})
    plan.append({"type": "dropout", "p": spec.dropout_p})
    plan.append({"type": "dense", "name": "head.out", "in": spec.head_units, "out": 1})
    return plan


class Model:
    """A feed-forward stack built from a :class:`ModelSpec`.

    Parameters live in ``self.params`` as tensors keyed
    ``"<layer>.weight"`` / ``"<layer>.bias"``, in layer order.
    """

    def __init__(self, spec: ModelSpec, params: dict[str, Tensor]):
        self.spec = spec
        self.layers = _layer_plan(spec)
        self.params = params
        expected = []
        for layer in self.layers:
            if layer["type"] in ("conv", "dense"):
                expected += [layer["name"] + ".weight", layer["name"] + ".bias"]
        if list(params) != expected:
            raise BadSpec(f"parameter names {list(params)} do not match the layer plan")

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def astype(self, dtype) -> "Model":
        params = {k: Tensor(v.data.astype(dtype), requires_grad=True, name=k) for k, v in self.params.items()}
        return Model(self.spec, params)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise ShapeMismatch(f"{k}: stored {state[k].shape}, model {p.shape}")
            p.data = np.asarray(state[k], dtype=p.dtype).copy()

    def forward(self, x, train: bool = False, rng: np.random.Generator | None = None, record: list | None = None) -> Tensor:
        """Run the stack on ``x`` of shape ``[N, 1, *input_shape]``; returns ``[N, 1]``.

        If ``record`` is a list, ``(layer name or type, output shape)`` is
        appended after every layer.
        """
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        expected = (1,) + self.spec.input_shape
        if x.ndim != len(expected) + 1 or x.shape[1:] != expected:
            raise ShapeMismatch(f"{self.spec.kind} expects [N, *{expected}], got {x.shape}")
        p = self.params
        for layer in self.layers:
            kind = layer["type"]
            if kind == "conv":
                x = conv(x, p[layer["name"] + ".weight"], p[layer["name"] + ".bias"])
            elif kind == "dense":
                x = dense(x, p[layer["name"] + ".weight"], p[layer["name"] + ".bias"])
            elif kind == "relu":
                x = relu(x)
            elif kind == "maxpool":
                x = maxpool(x)
            elif kind == "gap":
                x = global_avg_pool(x)
            elif kind == "dropout":
                x = dropout(x, layer["p"], train, rng)
            if record is not None:
                record.append((layer.get("name", kind), x.shape))
        return x

    __call__ = forward

    def to_years(self, raw):
        return np.asarray(raw, dtype=np.float64) * self.spec.target_std + self.spec.target_mean


def _init_params(spec: ModelSpec, seed: int, dtype) -> dict[str, Tensor]:
    """He-uniform weights (bound sqrt(6 / fan_in)), zero biases, drawn in layer order."""
    rng = np.random.default_rng(seed)
    params = {}
    k = spec.kernel_size
    for layer in _layer_plan(spec):
        if layer["type"] == "conv":
            shape = (layer["out"], layer["in"]) + (k,) * spec.rank
            fan_in = layer["in"] * k**spec.rank
        elif layer["type"] == "dense":
            shape = (layer["in"], layer["out"])
            fan_in = layer["in"]
        else:
            continue
        bound = math.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=shape).astype(dtype)
        params[layer["name"] + ".weight"] = Tensor(w, requires_grad=True, name=layer["name"] + ".weight")
        bias = np.zeros(layer["out"], dtype=dtype)
        params[layer["name"] + ".bias"] = Tensor(bias, requires_grad=True, name=layer["name"] + ".bias")
    return params


def build_model(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> Model:
    return Model(spec, _init_params(spec, seed, dtype))


def build_brainnet3d(spec: ModelSpec | None = None, seed: int = 0, dtype=np.float32) -> Model:
    """Four blocks of two 3x3x3 convs (ReLU each) and 2x max pooling, then
    GAP -> dense(128) + ReLU -> dropout(0.5) -> dense(1)."""
    spec = spec or ModelSpec.default("brainnet3d")
    if spec.kind != "brainnet3d":
        raise BadSpec(f"build_brainnet3d given a {spec.kind} spec")
    return build_model(spec, seed, dtype)


def build_slicenet2d(spec: ModelSpec | None = None, seed: int = 0, dtype=np.float32) -> Model:
    """Stand-in 2D backbone with the slice head GAP -> dense(1024) -> dropout(0.5) -> dense(1)."""
    spec = spec or ModelSpec.default("slicenet2d")
    if spec.kind != "slicenet2d":
        raise BadSpec(f"build_slicenet2d given a {spec.kind} spec")
    return build_model(spec, seed, dtype)


def block_downsample(data: np.ndarray, factor: int) -> np.ndarray:
    """Average non-overlapping ``factor``-wide blocks; trailing remainders are dropped."""
    if factor == 1:
        return data
    trimmed = data[tuple(slice(0, (s // factor) * factor) for s in data.shape)]
    split = []
    for s in trimmed.shape:
        split += [s // factor, factor]
    return trimmed.reshape(split).mean(axis=tuple(range(1, 2 * data.ndim, 2)), dtype=np.float64).astype(data.dtype)


def prepare_input(spec: ModelSpec, data: np.ndarray) -> np.ndarray:
    """Downsample and scale one spatial array into the network's input grid."""
    arr = block_downsample(np.asarray(data, dtype=np.float32), spec.input_downsample)
    if arr.shape != spec.input_shape:
        raise ShapeMismatch(f"input {np.shape(data)} -> {arr.shape} after downsampling, model expects {spec.input_shape}")
    if spec.input_scale != 1.0:
        arr = arr * np.float32(spec.input_scale)
    return arr


def median_fusion(values: Sequence[float]) -> float:
    """Median, with the mean of the two central order statistics for even counts."""
    ordered = sorted(float(v) for v in values)
    n = len(ordered)
    if n == 0:
        raise WrongSliceCount("cannot fuse zero predictions")
    mid = n // 2
    if n % 2:
        return ordered[mid]
    return (ordered[mid - 1] + ordered[mid]) / 2


def predict_volume_3d(model: Model, volume, subject_id=None, true_age=None) -> SubjectPrediction:
    if model.spec.kind != "brainnet3d":
        raise BadSpec("predict_volume_3d needs a brainnet3d model")
    data = volume.data if isinstance(volume, Volume) else np.asarray(volume)
    x = prepare_input(model.spec, data)[None, None]
    raw = model.forward(x.astype(model.dtype), train=False).data[0, 0]
    return SubjectPrediction(subject_id, float(model.to_years(raw)), None, true_age)


def predict_subject_sliced(model: Model, slices: Sequence[Slice], k: int = 40, subject_id=None, true_age=None) -> SubjectPrediction:
    """Predict every slice independently and fuse by the median."""
    if model.spec.kind != "slicenet2d":
        raise BadSpec("predict_subject_sliced needs a slicenet2d model")
    if len(slices) != k:
        raise WrongSliceCount(f"expected {k} slices, got {len(slices)}")
    batch = np.stack([prepare_input(model.spec, s.data if isinstance(s, Slice) else s) for s in slices])[:, None]
    raw = model.forward(batch.astype(model.dtype), train=False).data[:, 0]
    per_slice = tuple(float(v) for v in model.to_years(raw))
    if subject_id is None and slices and isinstance(slices[0], Slice):
        subject_id = slices[0].subject_id
    return SubjectPrediction(subject_id, median_fusion(per_slice), per_slice, true_age)
