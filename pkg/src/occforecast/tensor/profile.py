"""Analytic FLOP formulas and a recorder that ops report into.

Convention: one multiply-accumulate is 2 FLOPs; bias adds, normalization
arithmetic, activation comparisons, exp/sqrt/divide each count as 1 FLOP.
Data movement (reshape, transpose, concat, slicing, nearest upsampling) is free.

Each formula here has a scalar-loop twin in ``occforecast.complexity`` that
increments a counter per arithmetic operation; the two are required to agree
exactly.
"""

from __future__ import annotations

import contextlib
from collections import defaultdict
from math import prod

_scope: list[str] = []
_active: list["FlopRecorder"] = []


def flops_elementwise(n: int) -> int:
    return n


def flops_gap(n_out: int, n_reduced: int) -> int:
    # (n-1) adds + 1 divide per output
    return n_out * n_reduced


def flops_linear(rows: int, n_in: int, n_out: int, bias: bool = True) -> int:
    return 2 * rows * n_in * n_out + (rows * n_out if bias else 0)


def flops_conv(out_positions: int, c_out: int, c_in: int, kernel: tuple, bias: bool = True) -> int:
    taps = c_in * prod(kernel)
    return 2 * out_positions * c_out * taps + (out_positions * c_out if bias else 0)


def flops_norm(positions: int, channels: int) -> int:
    # mean C, centre C, square C, sum C-1, divide 1, +eps 1, sqrt 1,
    # normalize C, scale C, shift C
    return positions * (7 * channels + 2)


def flops_relu(n: int) -> int:
    return n


def flops_softmax(rows: int, width: int) -> int:
    # max (m-1), subtract m, exp m, sum (m-1), divide m
    return rows * (5 * width - 2)


def flops_matmul(batch: int, n: int, k: int, m: int) -> int:
    return 2 * batch * n * k * m


def flops_sdpa(batch: int, n: int, m: int, d: int, dv: int) -> int:
    logits = flops_matmul(batch, n, d, m)
    scale = batch * n * m
    return logits + scale + flops_softmax(batch * n, m) + flops_matmul(batch, n, m, dv)


class FlopRecorder:
    """Accumulates FLOPs and activation element counts per scope path."""

    def __init__(self):
        self.flops = defaultdict(int)
        self.activations = defaultdict(int)
        self.by_op = defaultdict(int)
        self.peak = 0  # largest single op output, in elements

    def add(self, op: str, flops: int, elements: int):
        key = ".".join(_scope)
        self.flops[key] += int(flops)
        self.activations[key] += int(elements)
        self.by_op[op] += int(flops)
        self.peak = max(self.peak, int(elements))

    @property
    def total_flops(self) -> int:
        return sum(self.flops.values())

    @property
    def total_activations(self) -> int:
        return sum(self.activations.values())


@contextlib.contextmanager
def recording():
    rec = FlopRecorder()
    _active.append(rec)
    try:
        yield rec
    finally:
        _active.remove(rec)


@contextlib.contextmanager
def scope(name: str):
    _scope.append(name)
    try:
        yield
    finally:
        _scope.pop()


def record(op: str, flops: int, elements: int):
    for rec in _active:
        rec.add(op, flops, elements)


def is_recording() -> bool:
    return bool(_active)
