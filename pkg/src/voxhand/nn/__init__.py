"""A small reverse-mode autodiff engine with the layers a voxel CNN needs."""

from . import functional
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (AdaptiveAvgPool3d, BatchNorm, Conv3d, ConvTranspose3d, Dropout, Flatten, LayerSpec, Linear,
                     MaxPool3d, Module, ReLU, Residual, Sequential)
from .optim import Adam, adam_step, init_weights
from .tensor import Parameter, Tensor, no_grad

__all__ = [
    "functional", "load_checkpoint", "save_checkpoint", "AdaptiveAvgPool3d", "BatchNorm", "Conv3d",
    "ConvTranspose3d", "Dropout", "Flatten", "LayerSpec", "Linear", "MaxPool3d", "Module", "ReLU", "Residual",
    "Sequential", "Adam", "adam_step", "init_weights", "Parameter", "Tensor", "no_grad",
]
