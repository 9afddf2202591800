"""Minimal reverse-mode autodiff over numpy arrays in NCHW layout."""
from .tensor import Tensor, Parameter, backward, default_dtype, float64_mode, no_grad
from .ops import (
    add, mul_scalar, conv2d, relu, concat_channels, split_channels, upsample_bilinear,
    downsample_avg, crop, normalize_channels, softmax_cross_entropy, epe_loss,
    cosine_normal_loss, weighted_sum,
)
from .optim import Adam
from .checkpoint import save_parameters, load_parameters

__all__ = [
    "Tensor", "Parameter", "backward", "default_dtype", "float64_mode", "no_grad",
    "add", "mul_scalar", "conv2d", "relu", "concat_channels", "split_channels",
    "upsample_bilinear", "downsample_avg", "crop", "normalize_channels",
    "softmax_cross_entropy", "epe_loss", "cosine_normal_loss", "weighted_sum",
    "Adam", "save_parameters", "load_parameters",
]
