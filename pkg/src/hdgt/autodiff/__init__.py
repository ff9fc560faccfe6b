"""Minimal reverse-mode autodiff engine over numpy."""
from . import checkpoint, ops
from .gradcheck import grad_check, relative_error
from .ops import (
    concat,
    conv1d,
    layer_norm,
    linear,
    log_softmax,
    matmul,
    max_pool_over_set,
    mean_pool_over_time,
    multi_head_attention,
    relu,
    segment_attention,
    segment_softmax,
    segment_sum,
    smooth_l1,
    softmax,
    take,
)
from .params import ParamTable
from .tensor import Tensor, default_dtype, no_grad, precision, set_default_dtype

__all__ = [
    "Tensor", "ParamTable", "no_grad", "precision", "default_dtype", "set_default_dtype",
    "grad_check", "relative_error", "checkpoint", "ops", "concat", "conv1d", "layer_norm",
    "linear", "log_softmax", "matmul", "max_pool_over_set", "mean_pool_over_time",
    "multi_head_attention", "relu", "segment_attention", "segment_softmax", "segment_sum",
    "smooth_l1", "softmax", "take",
]
