"""Parameter and FLOP accounting.

Convention: one multiply-accumulate is 2 FLOPs; bias adds, normalization,
activation, exp, sqrt, divide and compare are 1 FLOP each; reshapes,
concatenation and nearest upsampling are free. Counts come from running the
real forward pass on zeros under a recorder, so they follow the graph that
actually executes for the given shape.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .model import Dims, ForecastModel, ModelConfig
from .observer import E4AConfig, Observer
from .tensor import ParamStore, ShapeError, no_grad, tensor
from .tensor.profile import recording, scope

VARIANTS = ("e4a", "bev", "tpv", "dense")


def _block(name: str, depth: int) -> str:
    return ".".join(name.split(".")[:depth]) or "(root)"


@dataclass
class CostReport:
    params: dict = field(default_factory=dict)  # block -> count
    flops: dict = field(default_factory=dict)  # block -> count
    activations: dict = field(default_factory=dict)  # block -> summed op output elements
    peak_activation: int = 0
    shape: tuple = ()

    @property
    def total_params(self) -> int:
        return sum(self.params.values())

    @property
    def total_flops(self) -> int:
        return sum(self.flops.values())

    @property
    def total_activations(self) -> int:
        return sum(self.activations.values())

    def merge(self, other: "CostReport") -> "CostReport":
        out = CostReport(dict(self.params), dict(self.flops), dict(self.activations),
                         max(self.peak_activation, other.peak_activation), self.shape or other.shape)
        for mine, theirs in ((out.params, other.params), (out.flops, other.flops),
                             (out.activations, other.activations)):
            for k, v in theirs.items():
                mine[k] = mine.get(k, 0) + v
        return out

    def to_dict(self) -> dict:
        return {"params": self.params, "flops": self.flops, "activations": self.activations,
                "peak_activation": self.peak_activation, "shape": list(self.shape),
                "total_params": self.total_params, "total_flops": self.total_flops}

    @classmethod
    def from_dict(cls, d: dict) -> "CostReport":
        return cls(d["params"], d["flops"], d["activations"], d["peak_activation"], tuple(d["shape"]))

    def table(self) -> str:
        blocks = sorted(set(self.params) | set(self.flops))
        rows = [("block", "params", "MFLOPs", "act (M)")]
        for b in blocks:
            rows.append((b, str(self.params.get(b, 0)), f"{self.flops.get(b, 0) / 1e6:.3f}",
                         f"{self.activations.get(b, 0) / 1e6:.3f}"))
        rows.append(("total", str(self.total_params), f"{self.total_flops / 1e6:.3f}",
                     f"{self.total_activations / 1e6:.3f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        return "\n".join("  ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(r, widths)))
                         for r in rows)


def count_params(model, depth: int = 2) -> CostReport:
    """Parameter counts grouped by the first ``depth`` components of each name."""
    store = model if isinstance(model, ParamStore) else model.store
    out: dict = {}
    for name, p in store.items():
        key = _block(name, depth)
        out[key] = out.get(key, 0) + p.size
    return CostReport(params=out)


def _record(fn, x: np.ndarray, depth: int) -> CostReport:
    with no_grad(), recording() as rec:
        fn(tensor(x))
    flops, acts = {}, {}
    for key, v in rec.flops.items():
        b = _block(key, depth)
        flops[b] = flops.get(b, 0) + v
    for key, v in rec.activations.items():
        b = _block(key, depth)
        acts[b] = acts.get(b, 0) + v
    return CostReport(flops=flops, activations=acts, peak_activation=rec.peak, shape=tuple(x.shape))


def count_flops(model: ForecastModel, shape, depth: int = 2) -> CostReport:
    """FLOPs of one forward pass on an input of ``shape`` = (T, C_in+6, X, Y, Z)."""
    shape = tuple(int(s) for s in shape)
    d = model.dims
    expect = (d.obs_frames, d.in_channels + 6)
    if len(shape) != 5 or shape[:2] != expect:
        raise ShapeError(f"model expects input (T, C, X, Y, Z) with (T, C) = {expect}, got {shape}")
    if any(s < 1 for s in shape):
        raise ShapeError(f"empty extent in {shape}")
    model.cfg.e4a(d.obs_frames + d.future_frames).check(shape[2:])
    return _record(model.forward, np.zeros(shape), depth)


def observer_cost(cfg: E4AConfig, in_channels: int, frames: int, spatial, seed: int = 0) -> CostReport:
    store = ParamStore(seed)
    obs = Observer(store, "observer", in_channels, cfg, spatial)

    def run(x):
        with scope("observer"):
            return obs(x)

    rep = _record(run, np.zeros((frames, in_channels) + tuple(spatial)), depth=2)
    rep.params = count_params(store, depth=2).params
    return rep


def compare_variants(cfg: ModelConfig, dims: Dims, spatial=None) -> dict:
    """Observer cost for each representation style plus the full-pipeline report."""
    spatial = tuple(spatial or dims.spatial)
    dims = dataclasses.replace(dims, spatial=spatial)
    out = {}
    for v in VARIANTS:
        e4a = dataclasses.replace(cfg.e4a(dims.obs_frames + dims.future_frames), variant=v)
        out[v] = observer_cost(e4a, dims.in_channels + 6, dims.obs_frames, spatial)
    model = ForecastModel(cfg, dims)
    shape = (dims.obs_frames, dims.in_channels + 6) + spatial
    out["full"] = count_params(model).merge(count_flops(model, shape))
    return out


def variants_table(reports: dict) -> str:
    rows = [("variant", "params", "MFLOPs", "peak act")]
    for k, r in reports.items():
        rows.append((k, str(r.total_params), f"{r.total_flops / 1e6:.3f}", str(r.peak_activation)))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in rows)


def variants_json(reports: dict) -> str:
    return json.dumps({k: r.to_dict() for k, r in reports.items()}, sort_keys=True)
