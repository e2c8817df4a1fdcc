"""Minimal reverse-mode autodiff engine and the autoencoder built on it."""
from .functional import conv3d, conv_transpose3d, prelu, relu, softmax_channels
from .model import InvalidConfig, Model, ModelConfig, build_autoencoder, forward
from .tensor import NoTape, ShapeMismatch, Tensor, no_grad, parameter

__all__ = [
    "conv3d", "conv_transpose3d", "prelu", "relu", "softmax_channels",
    "InvalidConfig", "Model", "ModelConfig", "build_autoencoder", "forward",
    "NoTape", "ShapeMismatch", "Tensor", "no_grad", "parameter",
]
