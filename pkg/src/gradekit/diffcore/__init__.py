"""Minimal reverse-mode autodiff engine plus Adam, sized for the graders and GCN."""
from .gradcheck import check_against_reference, check_gradients, numerical_grad, relative_error
from .losses import bce_with_logits, hinge_loss, mae_loss
from .ops import (add, concat, conv3d, linear, matmul, maxpool3d_2x, mean, mul,
                  relu, reshape, sigmoid, sub, tanh, upsample_nearest3d)
from .ops import sum as sum_
from .optim import Adam, AdamState, adam_step
from .serialize import digest, dumps_tensors, load_tensors, loads_tensors, save_tensors
from .tensor import Tensor, as_tensor, backward, default_dtype, f64_mode

__all__ = [
    "Tensor", "as_tensor", "backward", "default_dtype", "f64_mode",
    "add", "sub", "mul", "mean", "sum_", "reshape", "concat", "relu", "tanh", "sigmoid",
    "matmul", "linear", "conv3d", "maxpool3d_2x", "upsample_nearest3d",
    "mae_loss", "bce_with_logits", "hinge_loss",
    "Adam", "AdamState", "adam_step",
    "save_tensors", "load_tensors", "dumps_tensors", "loads_tensors", "digest",
    "check_gradients", "check_against_reference", "numerical_grad", "relative_error",
]
