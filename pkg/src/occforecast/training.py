"""Optimizer, single training step and a resumable training loop."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ForecastModel, motion_features
from .predictor import LossReport, LossWeights, loss
from .tensor import ParamStore, records, tensor


class NonFiniteLossError(RuntimeError):
    def __init__(self, term: str, sample_seed: int, step: int):
        super().__init__(f"non-finite {term} loss at step {step} (sample seed {sample_seed})")
        self.term, self.sample_seed, self.step = term, sample_seed, step


class AdamW:
    """Adam with decoupled weight decay: ``p <- p(1 - lr*wd)`` before the moment update."""

    def __init__(self, store: ParamStore, lr: float = 3e-4, weight_decay: float = 0.01,
                 betas: tuple = (0.9, 0.999), eps: float = 1e-8, warmup: int = 0):
        self.store = store
        self.lr, self.weight_decay, self.betas, self.eps, self.warmup = lr, weight_decay, betas, eps, warmup
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in store.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in store.items()}

    def current_lr(self) -> float:
        if self.warmup and self.t < self.warmup:
            return self.lr * (self.t + 1) / self.warmup
        return self.lr

    def step(self):
        lr = self.current_lr()
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for n, p in self.store.items():
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[n], self.v[n]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if lr == 0:
                continue
            p.data *= p.data.dtype.type(1 - lr * self.weight_decay)
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for n in self.m:
            out[f"adam.m/{n}"] = self.m[n]
            out[f"adam.v/{n}"] = self.v[n]
        out["adam.t"] = np.array([self.t], dtype=np.int64)
        return out

    def load_state(self, r: dict):
        self.t = int(r["adam.t"][0])
        for n in self.m:
            self.m[n] = r[f"adam.m/{n}"].astype(self.m[n].dtype)
            self.v[n] = r[f"adam.v/{n}"].astype(self.v[n].dtype)


def train_step(model: ForecastModel, batch: list, opt: AdamW, task: str,
               weights: LossWeights = LossWeights(), features: list | None = None) -> LossReport:
    """Forward/backward every sample (loss scaled by 1/B), then one optimizer update.

    Gradients accumulate in batch order, so the result is deterministic.
    Returns a report whose terms are batch means.
    """
    model.store.zero_grad()
    occ = flo = tot = 0.0
    counts: dict = {}
    for i, s in enumerate(batch):
        f = features[i] if features is not None else motion_features(s, model.spec)
        r = loss(model(f), s, task, weights)
        for term, val in (("occupancy", r.occupancy), ("flow", r.flow)):
            if not np.isfinite(val):
                raise NonFiniteLossError(term, s.seed, opt.t)
        (r.total * (1.0 / len(batch))).backward()
        occ += r.occupancy / len(batch)
        flo += r.flow / len(batch)
        tot += float(r.total.data) / len(batch)
        for k, c in r.class_counts.items():
            counts[k] = counts.get(k, 0) + c
    opt.step()
    return LossReport(tensor(tot), occ, flo, counts)


@dataclass(frozen=True)
class TrainSettings:
    steps: int = 2000
    batch: int = 1
    lr: float = 3e-4
    weight_decay: float = 0.01
    warmup: int = 0
    seed: int = 0
    checkpoint_every: int = 0
    task: str = "inflated_gmo"


class Trainer:
    """Step-indexed loop: the batch for step k depends only on (seed, k), so resuming is exact."""

    def __init__(self, model: ForecastModel, data: list, settings: TrainSettings,
                 weights: LossWeights = LossWeights(), log_path=None, checkpoint_dir=None):
        if not data:
            raise ValueError("training set is empty")
        self.model, self.data, self.s, self.weights = model, data, settings, weights
        self.opt = AdamW(model.store, settings.lr, settings.weight_decay, warmup=settings.warmup)
        self.log_path = Path(log_path) if log_path else None
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.log: list[dict] = []
        self._features: dict[int, np.ndarray] = {}
        self._orders: dict[int, np.ndarray] = {}

    @property
    def step(self) -> int:
        return self.opt.t

    def batch_indices(self, step: int) -> list:
        n, b = len(self.data), self.s.batch
        out = []
        for j in range(step * b, step * b + b):
            epoch, pos = divmod(j, n)
            if epoch not in self._orders:
                self._orders = {epoch: np.random.default_rng([self.s.seed, epoch]).permutation(n)}
            out.append(int(self._orders[epoch][pos]))
        return out

    def _feature(self, i: int):
        if i not in self._features:
            self._features[i] = motion_features(self.data[i], self.model.spec)
        return self._features[i]

    def run(self, until: int | None = None) -> list:
        until = self.s.steps if until is None else min(until, self.s.steps)
        while self.step < until:
            idx = self.batch_indices(self.step)
            t0 = time.perf_counter()
            r = train_step(self.model, [self.data[i] for i in idx], self.opt, self.s.task, self.weights,
                           [self._feature(i) for i in idx])
            rec = {"step": self.step, "total": float(r.total.data), "occupancy": r.occupancy, "flow": r.flow,
                   "wall": time.perf_counter() - t0}
            self.log.append(rec)
            if self.log_path:
                with open(self.log_path, "a") as fh:
                    fh.write(json.dumps(rec) + "\n")
            if self.checkpoint_dir and self.s.checkpoint_every and self.step % self.s.checkpoint_every == 0:
                self.save(self.checkpoint_dir / f"step_{self.step:06d}.ocfr")
        return self.log

    def save(self, path, meta: dict | None = None):
        save_checkpoint(path, self.model.store, self.opt, meta)

    def resume(self, path):
        r = records.load(path)
        load_params(self.model.store, r)
        self.opt.load_state(r)


def _meta_record(meta: dict) -> np.ndarray:
    return np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)


def save_checkpoint(path, store: ParamStore, opt: AdamW | None = None, meta: dict | None = None):
    rec = {f"param/{n}": p.data for n, p in store.items()}
    if opt is not None:
        rec.update(opt.state())
    rec["meta"] = _meta_record(meta or {})
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    records.save(path, rec)


def load_params(store: ParamStore, r: dict, strict: bool = True):
    state = {k[len("param/"):]: v for k, v in r.items() if k.startswith("param/")}
    store.load_state_dict(state, strict=strict)


def checkpoint_meta(r: dict) -> dict:
    return json.loads(bytes(r["meta"]).decode()) if "meta" in r else {}


def load_log(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]

