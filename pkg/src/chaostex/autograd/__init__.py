"""Minimal dense reverse-mode differentiation."""
from . import ops
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import grad_check, primitive_errors
from .ops import (
    add,
    add_scalar,
    concat,
    conv2d,
    l2_normalize,
    log_sum_exp,
    matmul,
    mean,
    mean_pool_spatial,
    mul,
    neg,
    relu,
    scale,
    sigmoid,
    transpose,
)
from .tensor import Record, ShapeError, Tape, Tensor, backward, grad_enabled, no_grad

__all__ = [
    "ops",
    "Tensor",
    "Tape",
    "Record",
    "ShapeError",
    "backward",
    "no_grad",
    "grad_enabled",
    "grad_check",
    "primitive_errors",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "add",
    "add_scalar",
    "neg",
    "mul",
    "scale",
    "matmul",
    "transpose",
    "relu",
    "sigmoid",
    "mean",
    "log_sum_exp",
    "l2_normalize",
    "concat",
    "mean_pool_spatial",
    "conv2d",
]
