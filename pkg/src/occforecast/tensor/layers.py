"""Parameter store and the small set of parameterized layers the model uses."""

from __future__ import annotations

import math
import zlib

import numpy as np

from . import ops
from .tensor import ConfigError, ShapeError, Tensor, default_dtype


class ParamStore:
    """Named parameter tensors; the unit of checkpointing and counting.

    Every parameter is initialized from a generator seeded by ``(seed, crc32(name))``,
    so a parameter's initial value depends only on its name and the store seed,
    not on construction order.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._params: dict[str, Tensor] = {}

    def _rng(self, name):
        return np.random.default_rng([self.seed, zlib.crc32(name.encode())])

    def add(self, name: str, shape, init: str = "fan_in", fan_in: int | None = None, scale: float = 1.0) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        shape = tuple(int(s) for s in shape)
        dtype = default_dtype()
        if init == "zeros":
            data = np.zeros(shape, dtype=dtype)
        elif init == "ones":
            data = np.ones(shape, dtype=dtype)
        elif init == "fan_in":
            bound = scale / math.sqrt(fan_in if fan_in else shape[0])
            data = self._rng(name).uniform(-bound, bound, size=shape).astype(dtype)
        elif init == "normal":
            data = (scale * self._rng(name).standard_normal(shape)).astype(dtype)
        else:
            raise ValueError(f"unknown initializer {init!r}")
        p = Tensor(data, requires_grad=True)
        self._params[name] = p
        return p

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def num_params(self, prefix: str = "") -> int:
        return sum(p.size for n, p in self._params.items() if n.startswith(prefix))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self._params.items()}

    def load_state_dict(self, state: dict, strict: bool = True):
        missing = sorted(set(self._params) - set(state))
        extra = sorted(set(state) - set(self._params))
        if strict and (missing or extra):
            raise KeyError(f"checkpoint/model mismatch: missing={missing} extra={extra}")
        for n, arr in state.items():
            if n not in self._params:
                continue
            p = self._params[n]
            if tuple(arr.shape) != p.shape:
                raise ShapeError(f"{n}: checkpoint shape {arr.shape} != parameter shape {p.shape}")
            p.data = np.array(arr, dtype=p.dtype, copy=True)

    def randomize(self, seed: int, scale: float = 0.5):
        """Overwrite every parameter with seeded normal noise (tests use this to
        leave the zero-initialized fixed points)."""
        for n, p in self._params.items():
            rng = np.random.default_rng([seed, zlib.crc32(n.encode())])
            p.data = (scale * rng.standard_normal(p.shape)).astype(p.dtype)


class Linear:
    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int, bias: bool = True,
                 init: str = "fan_in", scale: float = 1.0):
        self.n_in, self.n_out = n_in, n_out
        self.w = store.add(f"{name}.w", (n_in, n_out), init, fan_in=n_in, scale=scale)
        self.b = store.add(f"{name}.b", (n_out,), init, fan_in=n_in, scale=scale) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.w, self.b)


class Conv:
    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int, kernel: int = 3, dims: int = 3,
                 stride: int = 1, pad: int | None = None, bias: bool = True, init: str = "fan_in"):
        self.stride = stride
        self.pad = kernel // 2 if pad is None else pad
        fan_in = c_in * kernel ** dims
        self.w = store.add(f"{name}.w", (c_out, c_in) + (kernel,) * dims, init, fan_in=fan_in)
        self.b = store.add(f"{name}.b", (c_out,), init, fan_in=fan_in) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv(x, self.w, self.b, stride=self.stride, pad=self.pad)


class NormAct:
    """Channel normalization (layer-style, per position) then activation."""

    def __init__(self, store: ParamStore, name: str, channels: int, act: str = "relu", axis: int = 1,
                 eps: float = 1e-5):
        if act not in ops.ACTIVATIONS:
            raise ConfigError(f"unknown activation {act!r}")
        self.gamma = store.add(f"{name}.gamma", (channels,), "ones")
        self.beta = store.add(f"{name}.beta", (channels,), "zeros")
        self.act = ops.ACTIVATIONS[act]
        self.axis, self.eps = axis, eps

    def __call__(self, x: Tensor) -> Tensor:
        return self.act(ops.layer_norm(x, self.gamma, self.beta, axis=self.axis, eps=self.eps))


def norm_act(x: Tensor, gamma: Tensor, beta: Tensor, act: str = "relu", axis: int = 1, eps: float = 1e-5) -> Tensor:
    return ops.ACTIVATIONS[act](ops.layer_norm(x, gamma, beta, axis=axis, eps=eps))


class WindowAttention:
    """Multi-head self-attention inside non-overlapping square windows of a plane.

    Input and output are (N, C, X, Y). No shifted windows, no relative position
    bias; the block is projection -> per-window attention -> output projection.
    """

    def __init__(self, store: ParamStore, name: str, channels: int, window: int, heads: int):
        if channels % heads:
            raise ConfigError(f"channels {channels} not divisible by heads {heads}")
        self.channels, self.window, self.heads = channels, window, heads
        self.qkv = Linear(store, f"{name}.qkv", channels, 3 * channels)
        self.proj = Linear(store, f"{name}.proj", channels, channels)

    def __call__(self, x: Tensor) -> Tensor:
        return wmsa(x, self.window, self.heads, self.qkv, self.proj)


def wmsa(x: Tensor, window: int, heads: int, qkv: Linear, proj: Linear) -> Tensor:
    n, c, nx, ny = x.shape
    w = window
    if nx % w or ny % w:
        raise ConfigError(f"window {w} does not divide plane {nx}x{ny}")
    if c % heads:
        raise ConfigError(f"channels {c} not divisible by heads {heads}")
    gx, gy, dh = nx // w, ny // w, c // heads
    tok = x.reshape(n, c, gx, w, gy, w).transpose(0, 2, 4, 3, 5, 1).reshape(n * gx * gy, w * w, c)
    q_k_v = qkv(tok).reshape(n * gx * gy, w * w, 3, heads, dh).transpose(2, 0, 3, 1, 4)
    out = ops.sdpa(q_k_v[0], q_k_v[1], q_k_v[2])
    out = out.transpose(0, 2, 1, 3).reshape(n * gx * gy, w * w, c)
    out = proj(out)
    return out.reshape(n, gx, gy, w, w, c).transpose(0, 5, 1, 3, 2, 4).reshape(n, c, nx, ny)
