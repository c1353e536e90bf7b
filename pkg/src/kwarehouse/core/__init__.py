from .tensor import GradTape, Parameter, Tensor, as_tensor, backprop_gradients
from .ops import (
    ShapeError,
    conv2d,
    cross_entropy,
    dense_affine,
    einsum,
    global_avg_pool,
    relu,
)
from .fdcheck import GradCheckError, finite_diff_check, finite_diff_errors

__all__ = [
    "GradTape", "Parameter", "Tensor", "as_tensor", "backprop_gradients",
    "ShapeError", "conv2d", "cross_entropy", "dense_affine", "einsum",
    "global_avg_pool", "relu",
    "GradCheckError", "finite_diff_check", "finite_diff_errors",
]
