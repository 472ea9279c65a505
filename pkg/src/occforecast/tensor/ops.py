"""Differentiable tensor operations.

Layout conventions: feature grids are channel-first, ``(N, C, *spatial)``,
where ``N`` is frames (or frames x samples). ``linear`` and attention operate
on the last axis.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import profile
from .tensor import ShapeError, Tensor, as_tensor, grad_enabled


def _node(data, parents, backward, op):
    if grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward, op)
    return Tensor(data, op=op)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _lift(a, like):
    if isinstance(a, Tensor):
        return a
    return Tensor(np.asarray(a, dtype=like.dtype))


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = b if isinstance(b, Tensor) else _lift(b, a)
    out = a.data + b.data
    profile.record("add", profile.flops_elementwise(out.size), out.size)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(out, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = b if isinstance(b, Tensor) else _lift(b, a)
    out = a.data - b.data
    profile.record("add", profile.flops_elementwise(out.size), out.size)

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _node(out, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = b
        out = a.data * c
        profile.record("mul", profile.flops_elementwise(out.size), out.size)
        return _node(out, (a,), lambda g: (g * c,), "scale")
    a = a if isinstance(a, Tensor) else _lift(a, b)
    out = a.data * b.data
    profile.record("mul", profile.flops_elementwise(out.size), out.size)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(out, (a, b), backward, "mul")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)
    profile.record("relu", profile.flops_relu(out.size), out.size)
    return _node(out, (x,), lambda g: (g * mask,), "relu")


ACTIVATIONS = {"relu": relu, "identity": lambda x: x}


# ---------------------------------------------------------------- reductions

def gap(x: Tensor, axes) -> Tensor:
    """Global average pooling over ``axes``; reduced axes keep extent 1.

    An empty axis set returns ``x`` unchanged.
    """
    axes = tuple(sorted({int(a) for a in axes}))
    if not axes:
        return x
    for a in axes:
        if not 0 <= a < x.ndim:
            raise ShapeError(f"gap axis {a} out of range for shape {x.shape}")
    n = math.prod(x.shape[a] for a in axes)
    out = x.data.mean(axis=axes, keepdims=True)
    profile.record("gap", profile.flops_gap(out.size, n), out.size)
    shape = x.shape

    def backward(g):
        return (np.broadcast_to(g / n, shape).astype(g.dtype),)

    return _node(out, (x,), backward, "gap")


def total(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    shape = x.shape
    return _node(out, (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    out = x.data.reshape(shape)
    return _node(out, (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, perm) -> Tensor:
    perm = tuple(perm)
    inv = tuple(np.argsort(perm))
    out = x.data.transpose(perm)
    return _node(out, (x,), lambda g: (g.transpose(inv),), "transpose")


def index(x: Tensor, idx) -> Tensor:
    out = x.data[idx]
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[idx] += g
        return (gx,)

    return _node(out, (x,), backward, "index")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    profile.record("concat", 0, out.size)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _node(out, tensors, backward, "concat")


def broadcast_to(x: Tensor, shape) -> Tensor:
    out = np.broadcast_to(x.data, shape)
    old = x.shape
    return _node(out, (x,), lambda g: (_unbroadcast(g, old),), "broadcast")


def upsample_nearest(x: Tensor, factor: int, n_spatial: int) -> Tensor:
    """Repeat each of the trailing ``n_spatial`` axes ``factor`` times."""
    out = x.data
    for ax in range(x.ndim - n_spatial, x.ndim):
        out = np.repeat(out, factor, axis=ax)
    profile.record("upsample", 0, out.size)
    lead = x.shape[: x.ndim - n_spatial]
    sp = x.shape[x.ndim - n_spatial:]

    def backward(g):
        split = list(lead)
        for e in sp:
            split += [e, factor]
        g = g.reshape(split)
        axes = tuple(len(lead) + 2 * i + 1 for i in range(n_spatial))
        return (g.sum(axis=axes),)

    return _node(out, (x,), backward, "upsample")


# ---------------------------------------------------------------- linear maps

def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``y = x @ w + b`` over the last axis; ``w`` has shape (in, out)."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear expects last extent {w.shape[0]}, got {x.shape}")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data
    rows = x.size // x.shape[-1]
    profile.record("linear", profile.flops_linear(rows, w.shape[0], w.shape[1], b is not None), out.size)

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ w.data.T
        gw = x.data.reshape(-1, x.shape[-1]).T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, backward, "linear")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    n, k, m = a.shape[-2], a.shape[-1], b.shape[-1]
    profile.record("matmul", profile.flops_matmul(out.size // (n * m), n, k, m), out.size)

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(out, (a, b), backward, "matmul")


def _im2col(xl: np.ndarray, kernel, stride: int, out_sp) -> np.ndarray:
    """Patch matrix (N*P, K*C) from channel-last padded ``xl`` (N, *spatial, C)."""
    dims = len(kernel)
    n, c = xl.shape[0], xl.shape[-1]
    rows = n * math.prod(out_sp)
    if all(k == 1 for k in kernel):
        sl = (slice(None),) + tuple(slice(0, stride * (o - 1) + 1, stride) for o in out_sp)
        return np.ascontiguousarray(xl[sl]).reshape(rows, c)
    win = sliding_window_view(xl, kernel, axis=tuple(range(1, 1 + dims)))
    win = win[(slice(None),) + tuple(slice(0, stride * (o - 1) + 1, stride) for o in out_sp)]
    # (N, *out, C, *k) -> (N, *out, *k, C)
    perm = tuple(range(1 + dims)) + tuple(range(2 + dims, 2 + 2 * dims)) + (1 + dims,)
    return np.ascontiguousarray(win.transpose(perm)).reshape(rows, -1)


def _channels_last(a: np.ndarray, pad) -> np.ndarray:
    a = np.moveaxis(a, 1, -1)
    if any(pad):
        return np.pad(a, [(0, 0)] + [(p, p) for p in pad] + [(0, 0)])
    return a


def conv(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation over the trailing ``w.ndim - 2`` spatial axes.

    ``x`` is (N, C_in, *spatial); ``w`` is (C_out, C_in, *kernel). Zero padding
    of ``pad`` cells on both sides of each spatial axis.
    """
    dims = w.ndim - 2
    if x.ndim != dims + 2:
        raise ShapeError(f"conv{dims}d expects {dims + 2}-d input, got {x.shape}")
    n, c_in = x.shape[:2]
    c_out, c_in_w, *kernel = w.shape
    kernel = tuple(kernel)
    if c_in != c_in_w:
        raise ShapeError(f"conv expects {c_in_w} input channels, got {c_in}")
    spatial = x.shape[2:]
    out_sp = tuple((e + 2 * pad - k) // stride + 1 for e, k in zip(spatial, kernel))
    if any(o < 1 for o in out_sp):
        raise ShapeError(f"conv output extent < 1 for input {spatial}, kernel {kernel}, pad {pad}, stride {stride}")

    positions = math.prod(out_sp)
    ksize = math.prod(kernel)
    cols = _im2col(_channels_last(x.data, (pad,) * dims), kernel, stride, out_sp)
    # weights as (K*C_in, C_out), kernel-major to match the patch layout
    wk = np.moveaxis(w.data, 1, -1).reshape(c_out, ksize * c_in).T
    out = cols @ wk
    if b is not None:
        out += b.data
    out = np.ascontiguousarray(np.moveaxis(out.reshape((n,) + out_sp + (c_out,)), -1, 1))
    profile.record("conv", profile.flops_conv(n * positions, c_out, c_in, kernel, b is not None), out.size)

    def backward(g):
        gl = np.moveaxis(g, 1, -1)
        g2 = gl.reshape(n * positions, c_out)
        gw = np.moveaxis((g2.T @ cols).reshape((c_out,) + kernel + (c_in,)), -1, 1)
        back_pad = tuple(k - 1 - pad for k in kernel)
        if stride == 1 and min(back_pad) >= 0:
            # input gradient = full correlation of g with the flipped kernel
            wf = w.data[(slice(None), slice(None)) + (slice(None, None, -1),) * dims]
            wf = np.moveaxis(wf, 0, -1).transpose(tuple(range(1, dims + 1)) + (dims + 1, 0))
            gcols = _im2col(_channels_last(g, back_pad), kernel, 1, spatial)
            gx = gcols @ wf.reshape(ksize * c_out, c_in)
            gx = np.moveaxis(gx.reshape((n,) + spatial + (c_in,)), -1, 1)
        else:
            gcols = (g2 @ wk.T).reshape((n,) + out_sp + kernel + (c_in,))
            padded = (n,) + tuple(e + 2 * pad for e in spatial) + (c_in,)
            gxl = np.zeros(padded, dtype=g.dtype)
            for offs in np.ndindex(*kernel):
                dst = (slice(None),) + tuple(
                    slice(o, o + stride * (e - 1) + 1, stride) for o, e in zip(offs, out_sp))
                gxl[dst] += gcols[(slice(None),) * (dims + 1) + offs]
            if pad:
                gxl = gxl[(slice(None),) + (slice(pad, -pad),) * dims]
            gx = np.moveaxis(gxl, -1, 1)
        grads = (np.ascontiguousarray(gx), gw)
        if b is not None:
            grads += (g2.sum(axis=0),)
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, backward, "conv")


# ---------------------------------------------------------------- normalization

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, axis: int = 1, eps: float = 1e-5) -> Tensor:
    """Normalize over ``axis`` independently at every other position."""
    axis = axis % x.ndim
    c = x.shape[axis]
    bshape = [1] * x.ndim
    bshape[axis] = c
    gm = gamma.data.reshape(bshape)
    mean = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mean
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gm + beta.data.reshape(bshape)
    profile.record("norm", profile.flops_norm(x.size // c, c), out.size)
    other = tuple(i for i in range(x.ndim) if i != axis)

    def backward(g):
        gh = g * gm
        gx = inv * (gh - gh.mean(axis=axis, keepdims=True) - xhat * (gh * xhat).mean(axis=axis, keepdims=True))
        return gx, (g * xhat).sum(axis=other), g.sum(axis=other)

    return _node(out, (x, gamma, beta), backward, "norm")


# ---------------------------------------------------------------- attention

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)
    w = x.shape[axis]
    profile.record("softmax", profile.flops_softmax(x.size // w, w), out.size)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (x,), backward, "softmax")


def sdpa(q: Tensor, k: Tensor, v: Tensor, return_weights: bool = False):
    """softmax(q k^T / sqrt(d)) v over the last two axes, batched over the rest."""
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"q/k key widths differ: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"k/v token counts differ: {k.shape} vs {v.shape}")
    d = q.shape[-1]
    scale = 1.0 / math.sqrt(d)
    logits = (q.data @ np.swapaxes(k.data, -1, -2)) * scale
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    attn = e / e.sum(axis=-1, keepdims=True)
    out = attn @ v.data
    n, m, dv = q.shape[-2], k.shape[-2], v.shape[-1]
    batch = out.size // (n * dv)
    profile.record("sdpa", profile.flops_sdpa(batch, n, m, d, dv), out.size + attn.size)

    def backward(g):
        ga = g @ np.swapaxes(v.data, -1, -2)
        gv = np.swapaxes(attn, -1, -2) @ g
        gs = attn * (ga - (ga * attn).sum(axis=-1, keepdims=True)) * scale
        gq = gs @ k.data
        gk = np.swapaxes(gs, -1, -2) @ q.data
        return _unbroadcast(gq, q.shape), _unbroadcast(gk, k.shape), _unbroadcast(gv, v.shape)

    out_t = _node(out, (q, k, v), backward, "sdpa")
    if return_weights:
        return out_t, attn
    return out_t


# ---------------------------------------------------------------- losses

def cross_entropy(logits: Tensor, target: np.ndarray, class_weights=None, axis: int = 1) -> Tensor:
    """Mean over positions of ``w[y] * -log softmax(logits)[y]``.

    ``target`` holds integer class ids with the class axis removed.
    """
    k = logits.shape[axis]
    z = np.moveaxis(logits.data, axis, -1)
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    t = target.astype(np.int64)
    picked = np.take_along_axis(logp, t[..., None], axis=-1)[..., 0]
    w = np.ones(k, dtype=logits.dtype) if class_weights is None else np.asarray(class_weights, dtype=logits.dtype)
    wt = w[t]
    count = t.size
    out = np.asarray(-(wt * picked).sum() / count, dtype=logits.dtype)

    def backward(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, t[..., None], 1.0, axis=-1)
        gz = (p - onehot) * wt[..., None] * (g / count)
        return (np.moveaxis(gz, -1, axis),)

    return _node(out, (logits,), backward, "cross_entropy")


def smooth_l1(pred: Tensor, target: np.ndarray, mask: np.ndarray, beta: float = 1.0, axis: int = 1) -> Tensor:
    """Mean Huber-style loss over components at positions where ``mask`` is set.

    ``mask`` has the component axis removed. Returns 0 when the mask is empty.
    """
    m = np.expand_dims(mask.astype(bool), axis)
    n = int(m.sum()) * pred.shape[axis]
    if n == 0:
        return _node(np.asarray(0.0, dtype=pred.dtype), (pred,), lambda g: (np.zeros_like(pred.data),), "smooth_l1")
    d = pred.data - target
    ad = np.abs(d)
    elem = np.where(ad < beta, 0.5 * d * d / beta, ad - 0.5 * beta)
    out = np.asarray((elem * m).sum() / n, dtype=pred.dtype)

    def backward(g):
        gd = np.where(ad < beta, d / beta, np.sign(d)) * m * (g / n)
        return (gd.astype(pred.dtype),)

    return _node(out, (pred,), backward, "smooth_l1")
