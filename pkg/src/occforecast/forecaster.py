"""Conditional forecasting of future feature frames.

A condition generator pools the observed feature per frame (GAP over X,Y,Z),
applies a linear layer shared across frames, norm and activation, and folds
time into channels (length T*C). A hypernetwork linear layer turns that
condition into a (T*C, T'*C) matrix, which is applied at every voxel to the
time-folded observation to produce T' future frames.
"""

from __future__ import annotations

import numpy as np

from .tensor import Linear, NormAct, ParamStore, ShapeError, Tensor, ops
from .tensor.profile import scope


def fold_time(x: Tensor) -> Tensor:
    """(T, C, X, Y, Z) -> (T*C, X, Y, Z)."""
    t, c = x.shape[:2]
    return x.reshape(t * c, *x.shape[2:])


def voxel_map(x_flat: Tensor, w: Tensor, frames: int, channels: int) -> Tensor:
    """Apply ``w`` (T*C, T'*C) at every voxel of ``x_flat`` (T*C, X, Y, Z), no bias.

    Returns (T', C, X, Y, Z).
    """
    tc = x_flat.shape[0]
    if w.shape[0] != tc or w.shape[1] != frames * channels:
        raise ShapeError(f"weights {w.shape} do not map {tc} -> {frames}x{channels}")
    spatial = x_flat.shape[1:]
    cols = x_flat.reshape(tc, -1).transpose(1, 0)  # (V, T*C)
    out = ops.matmul(cols, w)  # (V, T'*C)
    return out.transpose(1, 0).reshape(frames, channels, *spatial)


class Forecaster:
    def __init__(self, store: ParamStore, name: str, obs_frames: int, future_frames: int, channels: int,
                 act: str = "relu", hyper_scale: float = 0.01):
        self.t, self.tf, self.c = obs_frames, future_frames, channels
        tc, tfc = obs_frames * channels, future_frames * channels
        self.cond_fc = Linear(store, f"{name}.cond.linear", channels, channels)
        self.cond_norm = NormAct(store, f"{name}.cond.norm", channels, act, axis=-1)
        self.hyper = Linear(store, f"{name}.hyper", tc, tc * tfc, scale=hyper_scale)

    def condition(self, o_obs: Tensor) -> Tensor:
        t, c = o_obs.shape[:2]
        g = ops.gap(o_obs, (2, 3, 4)).reshape(t, c)
        return self.cond_norm(self.cond_fc(g)).reshape(t * c)

    def adaptive_weights(self, cond: Tensor) -> Tensor:
        if cond.shape != (self.t * self.c,):
            raise ShapeError(f"condition must have length {self.t * self.c}, got {cond.shape}")
        return self.hyper(cond.reshape(1, -1)).reshape(self.t * self.c, self.tf * self.c)

    def forecast(self, o_obs_flat: Tensor, w: Tensor) -> Tensor:
        return voxel_map(o_obs_flat, w, self.tf, self.c)

    def __call__(self, o_obs: Tensor) -> Tensor:
        with scope("condition"):
            w = self.adaptive_weights(self.condition(o_obs))
        with scope("forecast"):
            return self.forecast(fold_time(o_obs), w)


class StaticForecaster:
    """A single per-voxel linear layer T*C -> T'*C (the ablation replacement)."""

    def __init__(self, store: ParamStore, name: str, obs_frames: int, future_frames: int, channels: int):
        self.tf, self.c = future_frames, channels
        self.fc = Linear(store, f"{name}.linear", obs_frames * channels, future_frames * channels)

    def __call__(self, o_obs: Tensor) -> Tensor:
        x = fold_time(o_obs)
        tc = x.shape[0]
        spatial = x.shape[1:]
        y = self.fc(x.reshape(tc, -1).transpose(1, 0))
        return y.transpose(1, 0).reshape(self.tf, self.c, *spatial)


def selection_weights(obs_frames: int, future_frames: int, channels: int, source_frame: int = -1) -> np.ndarray:
    """Matrix copying one observed frame's channels into every future frame."""
    src = source_frame % obs_frames
    w = np.zeros((obs_frames * channels, future_frames * channels))
    for j in range(future_frames):
        w[src * channels:(src + 1) * channels, j * channels:(j + 1) * channels] = np.eye(channels)
    return w
