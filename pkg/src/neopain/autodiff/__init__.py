"""Minimal dense-tensor engine with reverse-mode automatic differentiation."""

from . import ops
from .gradcheck import check_gradients, finite_difference_check, numeric_gradient, relative_error
from .tensor import Tensor, backward, grad_enabled, no_grad
from .tensorio import TensorFormatError, load_tensor, save_tensor

__all__ = [
    "Tensor",
    "TensorFormatError",
    "backward",
    "check_gradients",
    "finite_difference_check",
    "grad_enabled",
    "load_tensor",
    "no_grad",
    "numeric_gradient",
    "ops",
    "relative_error",
    "save_tensor",
]
