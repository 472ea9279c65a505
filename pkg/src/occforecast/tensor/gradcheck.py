from __future__ import annotations

import numpy as np

from .tensor import Tensor


def grad_check(fn, inputs, eps: float = 1e-6, seed: int = 0, max_per_tensor: int | None = None) -> float:
    """Compare analytic gradients against central differences.

    ``fn`` takes no arguments and returns a Tensor computed from ``inputs``
    (a list of Tensors with ``requires_grad``). The output is contracted with a
    fixed random projection to get a scalar. Returns
    ``max |analytic - numeric| / max(1, |numeric|)`` over all checked entries.
    With ``max_per_tensor`` set, only that many randomly chosen entries per
    tensor are perturbed.

    Meant for 64-bit mode; in 32-bit the differences are dominated by rounding.
    """
    rng = np.random.default_rng(seed)
    out = fn()
    proj = rng.standard_normal(out.shape).astype(out.dtype)

    for t in inputs:
        t.grad = None
    out.backward(proj)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    def scalar():
        return float((fn().data * proj).sum())

    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_tensor is not None and flat.size > max_per_tensor:
            idx = rng.choice(flat.size, size=max_per_tensor, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = scalar()
            flat[i] = orig - eps
            down = scalar()
            flat[i] = orig
            num = (up - down) / (2 * eps)
            err = abs(ga.reshape(-1)[i] - num) / max(1.0, abs(num))
            worst = max(worst, err)
    return worst


def params_of(store, prefix: str = "") -> list[Tensor]:
    return [p for n, p in store.items() if n.startswith(prefix)]
