"""Decoding heads and the training loss.

The occupancy head turns refined future features into per-class logits; the
same head applied to the last observed frame gives the current-frame estimate.
A parallel head on the flow branch regresses per-voxel displacement (metres).

Loss: class-weighted cross-entropy over all voxels of the current and future
frames, plus smooth-L1 flow error averaged over voxels occupied by movable
objects in the future frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scene import SceneSample
from .tensor import Conv, ParamStore, Tensor, ops

TASKS = {
    "inflated_gmo": ("free", "gmo"),
    "fine_gmo": ("free", "gmo"),
    "fine_gmo_gso": ("free", "gmo", "gso"),
}


def task_classes(task: str) -> tuple:
    try:
        return TASKS[task]
    except KeyError:
        raise ValueError(f"unknown task {task!r}; expected one of {sorted(TASKS)}") from None


def task_labels(sample: SceneSample, task: str) -> np.ndarray:
    """Class ids for the current frame followed by the future frames, (1+T', X, Y, Z)."""
    task_classes(task)
    if task == "inflated_gmo":
        return sample.gmo_inflated.astype(np.int64)
    if task == "fine_gmo":
        return sample.gmo_fine.astype(np.int64)
    labels = np.where(sample.gso_fine > 0, 2, 0)
    return np.where(sample.gmo_fine > 0, 1, labels).astype(np.int64)


class Head:
    """3x3x3 conv -> ReLU -> 1x1x1 conv, applied per frame."""

    def __init__(self, store: ParamStore, name: str, channels: int, out: int, hidden: int | None = None):
        hidden = hidden or channels
        self.conv1 = Conv(store, f"{name}.conv1", channels, hidden, kernel=3)
        self.conv2 = Conv(store, f"{name}.conv2", hidden, out, kernel=1)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv2(ops.relu(self.conv1(x)))


@dataclass
class Prediction:
    occ_logits: Tensor  # (T', K, X, Y, Z)
    current_occ_logits: Tensor  # (1, K, X, Y, Z)
    flow: Tensor | None = None  # (T', 3, X, Y, Z)

    def classes(self):
        """Argmax class ids: (current (X,Y,Z), future (T',X,Y,Z))."""
        return self.current_occ_logits.data.argmax(axis=1)[0], self.occ_logits.data.argmax(axis=1)


@dataclass(frozen=True)
class LossWeights:
    class_weights: tuple = (1.0, 5.0, 2.0)  # free, gmo, gso
    occupancy: float = 1.0
    flow: float = 1.0


@dataclass
class LossReport:
    total: Tensor
    occupancy: float
    flow: float
    class_counts: dict = field(default_factory=dict)

    def as_dict(self):
        return {"total": float(self.total.data), "occupancy": self.occupancy, "flow": self.flow}


def loss(p: Prediction, s: SceneSample, task: str, weights: LossWeights = LossWeights()) -> LossReport:
    classes = task_classes(task)
    labels = task_labels(s, task)
    logits = ops.concat([p.current_occ_logits, p.occ_logits], axis=0)
    occ = ops.cross_entropy(logits, labels, weights.class_weights[:len(classes)])
    total = occ * weights.occupancy
    flow_val = 0.0
    if p.flow is not None:
        fl = ops.smooth_l1(p.flow, s.future_flow, s.future_gmo_fine > 0)
        flow_val = float(fl.data)
        total = total + fl * weights.flow
    counts = {c: int((labels == i).sum()) for i, c in enumerate(classes)}
    return LossReport(total, float(occ.data), flow_val, counts)
