"""Minimal dense-tensor engine with reverse-mode autodiff, Adam, checkpoints."""

from .tensor import Tensor, no_grad, grad_enabled, set_finite_checks
from .ops import (
    avg_pool_last,
    concat,
    conv2d,
    embedding_lookup,
    linear,
    matmul,
    mean_over_set,
    mse,
    relu,
    tanh,
)
from .optim import ParamStore, adam_step
from .gradcheck import grad_check
from .checkpoint import save_checkpoint, load_checkpoint, CHECKPOINT_VERSION

__all__ = [
    "Tensor",
    "no_grad",
    "grad_enabled",
    "set_finite_checks",
    "conv2d",
    "linear",
    "matmul",
    "relu",
    "tanh",
    "avg_pool_last",
    "mean_over_set",
    "concat",
    "mse",
    "embedding_lookup",
    "ParamStore",
    "adam_step",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_VERSION",
]
