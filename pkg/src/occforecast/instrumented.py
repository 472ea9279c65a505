"""Scalar-loop reference kernels that count every arithmetic operation they perform.

Each kernel computes the same result as its vectorized counterpart in
``tensor.ops`` one scalar at a time and bumps ``Counter.flops`` once per add,
subtract, multiply, divide, compare, exp or sqrt. They are deliberately slow
and only meant for tiny shapes: they exist to check the analytic FLOP formulas
and to serve as independent numerical oracles.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


class Counter:
    def __init__(self):
        self.flops = 0

    def add(self, a, b):
        self.flops += 1
        return a + b

    def sub(self, a, b):
        self.flops += 1
        return a - b

    def mul(self, a, b):
        self.flops += 1
        return a * b

    def div(self, a, b):
        self.flops += 1
        return a / b

    def max(self, a, b):
        self.flops += 1
        return a if a >= b else b

    def exp(self, a):
        self.flops += 1
        return math.exp(a)

    def sqrt(self, a):
        self.flops += 1
        return math.sqrt(a)

    def mac(self, acc, a, b):
        return self.add(acc, self.mul(a, b))


def add(ct: Counter, a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    out = np.empty(np.broadcast(a, b).shape)
    for idx in np.ndindex(out.shape):
        out[idx] = ct.add(np.broadcast_to(a, out.shape)[idx], np.broadcast_to(b, out.shape)[idx])
    return out


def mul(ct: Counter, a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    out = np.empty(np.broadcast(a, b).shape)
    for idx in np.ndindex(out.shape):
        out[idx] = ct.mul(np.broadcast_to(a, out.shape)[idx], np.broadcast_to(b, out.shape)[idx])
    return out


def relu(ct: Counter, x):
    x = np.asarray(x, float)
    out = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        out[idx] = ct.max(x[idx], 0.0)
    return out


def gap(ct: Counter, x, axes):
    """Mean over ``axes`` with keepdims: (n-1) adds and one divide per output."""
    x = np.asarray(x, float)
    axes = tuple(a % x.ndim for a in axes)
    out_shape = tuple(1 if d in axes else x.shape[d] for d in range(x.ndim))
    out = np.empty(out_shape)
    red = [range(x.shape[d]) for d in axes]
    n = math.prod(x.shape[d] for d in axes)
    for oidx in np.ndindex(out_shape):
        acc = None
        for ridx in itertools.product(*red):
            full = list(oidx)
            for d, r in zip(axes, ridx):
                full[d] = r
            v = x[tuple(full)]
            acc = v if acc is None else ct.add(acc, v)
        out[oidx] = ct.div(acc, n)
    return out


def linear(ct: Counter, x, w, b=None):
    x, w = np.asarray(x, float), np.asarray(w, float)
    lead = x.shape[:-1]
    n_in, n_out = w.shape
    out = np.empty(lead + (n_out,))
    for idx in np.ndindex(lead):
        for o in range(n_out):
            acc = 0.0
            for i in range(n_in):
                acc = ct.mac(acc, x[idx + (i,)], w[i, o])
            if b is not None:
                acc = ct.add(acc, b[o])
            out[idx + (o,)] = acc
    return out


def matmul(ct: Counter, a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    lead = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    n, k = a.shape[-2:]
    m = b.shape[-1]
    a, b = np.broadcast_to(a, lead + (n, k)), np.broadcast_to(b, lead + (k, m))
    out = np.empty(lead + (n, m))
    for idx in np.ndindex(lead):
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for t in range(k):
                    acc = ct.mac(acc, a[idx + (i, t)], b[idx + (t, j)])
                out[idx + (i, j)] = acc
    return out


def conv(ct: Counter, x, w, b=None, stride: int = 1, pad: int = 0):
    """Dense cross-correlation; every tap is a MAC, padded zeros included."""
    x, w = np.asarray(x, float), np.asarray(w, float)
    dims = w.ndim - 2
    xp = np.pad(x, [(0, 0), (0, 0)] + [(pad, pad)] * dims)
    n, c_in = x.shape[:2]
    c_out, _, *kernel = w.shape
    out_sp = tuple((e + 2 * pad - k) // stride + 1 for e, k in zip(x.shape[2:], kernel))
    out = np.empty((n, c_out) + out_sp)
    for bi in range(n):
        for o in range(c_out):
            for pos in np.ndindex(out_sp):
                acc = 0.0
                for ci in range(c_in):
                    for off in np.ndindex(*kernel):
                        src = tuple(p * stride + k for p, k in zip(pos, off))
                        acc = ct.mac(acc, xp[(bi, ci) + src], w[(o, ci) + off])
                if b is not None:
                    acc = ct.add(acc, b[o])
                out[(bi, o) + pos] = acc
    return out


def layer_norm(ct: Counter, x, gamma, beta, axis: int = 1, eps: float = 1e-5):
    x = np.asarray(x, float)
    xm = np.moveaxis(x, axis, -1)
    c = xm.shape[-1]
    out = np.empty_like(xm)
    for idx in np.ndindex(xm.shape[:-1]):
        v = xm[idx]
        s = v[0]
        for i in range(1, c):
            s = ct.add(s, v[i])
        mean = ct.div(s, c)
        xc = [ct.sub(v[i], mean) for i in range(c)]
        sq = [ct.mul(e, e) for e in xc]
        ss = sq[0]
        for i in range(1, c):
            ss = ct.add(ss, sq[i])
        var = ct.div(ss, c)
        std = ct.sqrt(ct.add(var, eps))
        for i in range(c):
            out[idx + (i,)] = ct.add(ct.mul(ct.div(xc[i], std), gamma[i]), beta[i])
    return np.moveaxis(out, -1, axis)


def norm_act(ct: Counter, x, gamma, beta, axis: int = 1, eps: float = 1e-5):
    return relu(ct, layer_norm(ct, x, gamma, beta, axis, eps))


def softmax(ct: Counter, x):
    """Softmax over the last axis: max, shift, exp, sum, divide."""
    x = np.asarray(x, float)
    out = np.empty_like(x)
    m = x.shape[-1]
    for idx in np.ndindex(x.shape[:-1]):
        row = x[idx]
        mx = row[0]
        for j in range(1, m):
            mx = ct.max(mx, row[j])
        e = [ct.exp(ct.sub(row[j], mx)) for j in range(m)]
        s = e[0]
        for j in range(1, m):
            s = ct.add(s, e[j])
        for j in range(m):
            out[idx + (j,)] = ct.div(e[j], s)
    return out


def sdpa(ct: Counter, q, k, v):
    q, k, v = (np.asarray(a, float) for a in (q, k, v))
    d = q.shape[-1]
    logits = matmul(ct, q, np.swapaxes(k, -1, -2))
    scale = 1.0 / math.sqrt(d)
    for idx in np.ndindex(logits.shape):
        logits[idx] = ct.mul(logits[idx], scale)
    return matmul(ct, softmax(ct, logits), v)


def wmsa(ct: Counter, x, window: int, heads: int, w_qkv, b_qkv, w_proj, b_proj):
    """Window self-attention on (N, C, X, Y) with a looped window partition."""
    x = np.asarray(x, float)
    n, c, nx, ny = x.shape
    dh = c // heads
    out = np.zeros_like(x)
    for bi in range(n):
        for gx in range(0, nx, window):
            for gy in range(0, ny, window):
                tok = np.array([[x[bi, ch, gx + i, gy + j] for ch in range(c)]
                                for i in range(window) for j in range(window)])
                qkv = linear(ct, tok, w_qkv, b_qkv).reshape(window * window, 3, heads, dh)
                heads_out = [sdpa(ct, qkv[:, 0, h], qkv[:, 1, h], qkv[:, 2, h]) for h in range(heads)]
                merged = np.concatenate(heads_out, axis=-1)
                y = linear(ct, merged, w_proj, b_proj)
                for t, (i, j) in enumerate(itertools.product(range(window), range(window))):
                    out[bi, :, gx + i, gy + j] = y[t]
    return out
