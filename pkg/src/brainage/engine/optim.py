"""Adam and the per-epoch linear learning-rate ramp."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import EpochOutOfRange, MissingGradient, ShapeMismatch, UsageError
from .tensor import Tensor

__all__ = ["Adam", "AdamState", "LrSchedule", "adam_step", "lr_at"]


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, param: Tensor, beta1=0.9, beta2=0.999, epsilon=1e-8) -> "AdamState":
        return cls(np.zeros_like(param.data), np.zeros_like(param.data), 0, beta1, beta2, epsilon)


def adam_step(param: Tensor, state: AdamState, lr: float) -> None:
    """One in-place Adam update of ``param`` from its accumulated gradient."""
    if param.grad is None:
        raise MissingGradient(f"parameter {param.name or param.shape} has no gradient")
    if state.m.shape != param.shape or state.v.shape != param.shape:
        raise ShapeMismatch(f"Adam moments {state.m.shape} do not fit parameter {param.shape}")
    g = param.grad
    b1, b2 = state.beta1, state.beta2
    state.t += 1
    state.m = b1 * state.m + (1 - b1) * g
    state.v = b2 * state.v + (1 - b2) * (g * g)
    m_hat = state.m / (1 - b1**state.t)
    v_hat = state.v / (1 - b2**state.t)
    update = lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    param.data = (param.data - update).astype(param.dtype, copy=False)
    state.m = state.m.astype(param.dtype, copy=False)
    state.v = state.v.astype(param.dtype, copy=False)


class Adam:
    """Adam over a fixed, ordered list of parameters."""

    def __init__(self, params, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = list(params)
        self.states = [AdamState.fresh(p, beta1, beta2, epsilon) for p in self.params]

    @property
    def t(self):
        return self.states[0].t if self.states else 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        for p, s in zip(self.params, self.states):
            adam_step(p, s, lr)


@dataclass(frozen=True)
class LrSchedule:
    initial_lr: float
    total_epochs: int
    floor: float = 0.0

    def __post_init__(self):
        if not self.initial_lr > 0:
            raise UsageError(f"initial_lr must be > 0, got {self.initial_lr}")
        if self.total_epochs < 1:
            raise UsageError(f"total_epochs must be >= 1, got {self.total_epochs}")
        if self.floor < 0:
            raise UsageError(f"floor must be >= 0, got {self.floor}")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    """Learning rate for a whole epoch: a linear ramp to zero, clipped at the floor."""
    if not 0 <= epoch <= schedule.total_epochs:
        raise EpochOutOfRange(f"epoch {epoch} outside 0..{schedule.total_epochs}")
    return max(schedule.floor, schedule.initial_lr * (1 - epoch / schedule.total_epochs))
