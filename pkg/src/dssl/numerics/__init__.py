"""Dense 2-D tensors, reverse-mode autodiff, MLPs and Adam."""
from .adam import Adam, adam_step
from .autodiff import (
    EPS_NORM,
    Node,
    backward,
    constant,
    detach,
    l2_normalize_cols,
    l2_normalize_rows,
    parameter,
)
from .gradcheck import finite_diff_check
from .mlp import Mlp, mlp_forward

__all__ = [
    "Adam", "adam_step", "EPS_NORM", "Node", "backward", "constant", "detach",
    "l2_normalize_cols", "l2_normalize_rows", "parameter", "finite_diff_check",
    "Mlp", "mlp_forward",
]
