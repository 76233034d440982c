from .tensor import Tensor, as_tensor, backward
from .gradcheck import finite_diff_check, finite_diff_spot_check
from . import ops

__all__ = ["Tensor", "as_tensor", "backward", "finite_diff_check",
           "finite_diff_spot_check", "ops"]
