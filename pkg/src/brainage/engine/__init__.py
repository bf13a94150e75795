"""Minimal reverse-mode tensor engine for the brain-age networks."""

from .checkpoint import decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint
from .ops import conv, dense, dropout, global_avg_pool, maxpool, mse_loss, relu, reshape
from .optim import Adam, AdamState, LrSchedule, adam_step, lr_at
from .tensor import Tensor, backward

__all__ = [
    "Adam",
    "AdamState",
    "LrSchedule",
    "Tensor",
    "adam_step",
    "backward",
    "conv",
    "decode_checkpoint",
    "dense",
    "dropout",
    "encode_checkpoint",
    "global_avg_pool",
    "lr_at",
    "maxpool",
    "mse_loss",
    "read_checkpoint",
    "relu",
    "reshape",
    "write_checkpoint",
]
