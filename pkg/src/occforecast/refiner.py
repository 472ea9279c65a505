from __future__ import annotations

from .observer import E4A, E4AConfig
from .tensor import ParamStore, ShapeError, Tensor, ops


class Refiner:
    """E4A over the concatenated observed + forecast frames, keeping the last T'.

    Uses its own E4A parameters unless ``shared`` (an existing E4A) is given.
    """

    def __init__(self, store: ParamStore, name: str, cfg: E4AConfig, shared: E4A | None = None):
        self.e4a = shared if shared is not None else E4A(store, f"{name}.e4a", cfg)

    def __call__(self, o_obs: Tensor, f_future: Tensor) -> Tensor:
        if o_obs.shape[1:] != f_future.shape[1:]:
            raise ShapeError(f"observed {o_obs.shape} and forecast {f_future.shape} disagree")
        t = o_obs.shape[0]
        seq = ops.concat([o_obs, f_future], axis=0)
        return self.e4a(seq)[t:]
