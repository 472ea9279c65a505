from . import ops, profile, records
from .gradcheck import grad_check, params_of
from .layers import Conv, Linear, NormAct, ParamStore, WindowAttention, norm_act, wmsa
from .tensor import (
    ConfigError,
    ShapeError,
    Tensor,
    as_tensor,
    default_dtype,
    grad_enabled,
    no_grad,
    precision,
    tensor,
)

__all__ = [
    "ConfigError", "Conv", "Linear", "NormAct", "ParamStore", "ShapeError", "Tensor", "WindowAttention",
    "as_tensor", "default_dtype", "grad_check", "grad_enabled", "no_grad", "norm_act", "ops", "params_of",
    "precision", "profile", "records", "tensor", "wmsa",
]
