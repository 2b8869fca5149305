"""Minimal NHWC tensor library with reverse-mode differentiation."""

from .ops import (add, batch_norm, concat, conv2d, conv2d_transpose, mul, relu, same_padding,
                  sigmoid, softmax, softmax_array, spatial_dropout, tsum, weighted_sum)
from .tensor import Parameter, Tensor, backward

__all__ = [
    "Tensor", "Parameter", "backward", "add", "mul", "tsum", "weighted_sum", "relu", "sigmoid",
    "softmax", "softmax_array", "concat", "spatial_dropout", "batch_norm", "conv2d",
    "conv2d_transpose", "same_padding",
]
