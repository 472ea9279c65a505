"""Occupancy IoU at the current frame, at each future horizon and over the whole span.

A predictor is any callable mapping a ``SceneSample`` to ``(current, future)``
class-id grids of shapes (X, Y, Z) and (T', X, Y, Z).

Counts are summed over samples before dividing (micro average), so the
report does not depend on sample order or on duplicating the dataset.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .predictor import task_classes, task_labels
from .scene import SceneSample

EMPTY_CONVENTIONS = ("perfect", "skip")


def _ratio(inter: int, union: int, empty: str = "perfect") -> float:
    if union == 0:
        return 100.0 if empty == "perfect" else float("nan")
    return 100.0 * inter / union


def iou(pred, gt, empty: str = "perfect") -> float:
    """IoU (%) of two boolean grids; 100 when both are empty (or NaN with ``empty="skip"``)."""
    pred, gt = np.asarray(pred, dtype=bool), np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"extent mismatch {pred.shape} vs {gt.shape}")
    return _ratio(int((pred & gt).sum()), int((pred | gt).sum()), empty)


@dataclass
class ClassCounts:
    """Intersection/union counts for one class: index 0 is the current frame, 1..T' the horizons."""

    inter: np.ndarray
    union: np.ndarray
    frame_ious: list = field(default_factory=list)  # per (sample, horizon), for the macro toggle


@dataclass
class IoUReport:
    classes: tuple
    iou_c: dict
    iou_f: dict  # class -> list over horizons 1..T'
    iou_f_span: dict
    samples: int
    average: str = "micro"
    empty: str = "perfect"

    @property
    def horizons(self) -> int:
        return len(next(iter(self.iou_f.values())))

    def mean(self, what: str = "iou_f_span"):
        vals = getattr(self, what)
        if what == "iou_f":
            return list(np.mean([vals[c] for c in self.classes], axis=0))
        return float(np.mean([vals[c] for c in self.classes]))

    def to_dict(self) -> dict:
        return {"classes": list(self.classes), "iou_c": self.iou_c, "iou_f": self.iou_f,
                "iou_f_span": self.iou_f_span, "samples": self.samples, "average": self.average,
                "empty": self.empty}

    @classmethod
    def from_dict(cls, d: dict) -> "IoUReport":
        return cls(tuple(d["classes"]), d["iou_c"], d["iou_f"], d["iou_f_span"], d["samples"],
                   d.get("average", "micro"), d.get("empty", "perfect"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "IoUReport":
        return cls.from_dict(json.loads(text))

    def table(self, name: str = "model") -> str:
        """One row per class, columns IoU_c, IoU_f(1..T') and the span value."""
        heads = ["method", "class", "IoU_c"] + [f"IoU_f({j})" for j in range(1, self.horizons + 1)] + ["span"]
        rows = [heads]
        for c in self.classes:
            rows.append([name, c, f"{self.iou_c[c]:.2f}"] + [f"{v:.2f}" for v in self.iou_f[c]]
                        + [f"{self.iou_f_span[c]:.2f}"])
        widths = [max(len(r[i]) for r in rows) for i in range(len(heads))]
        return "\n".join("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in rows)


def _accumulate(counts: dict, cur, fut, labels, classes, empty):
    grids_pred = np.concatenate([cur[None], fut], axis=0)
    if grids_pred.shape != labels.shape:
        raise ValueError(f"prediction {grids_pred.shape} does not match labels {labels.shape}")
    for k, c in enumerate(classes):
        if k == 0:
            continue
        p, g = grids_pred == k, labels == k
        axes = tuple(range(1, p.ndim))
        inter = (p & g).sum(axis=axes)
        union = (p | g).sum(axis=axes)
        cc = counts[c]
        cc.inter += inter
        cc.union += union
        cc.frame_ious.extend(_ratio(int(i), int(u), empty) for i, u in zip(inter[1:], union[1:]))


def evaluate(predictor, dataset: list, task: str, average: str = "micro", empty: str = "perfect") -> IoUReport:
    """Evaluate the non-free classes of ``task`` over ``dataset``."""
    if not dataset:
        raise ValueError("cannot evaluate on an empty dataset")
    if average not in ("micro", "macro"):
        raise ValueError(f"average must be 'micro' or 'macro', got {average!r}")
    if empty not in EMPTY_CONVENTIONS:
        raise ValueError(f"empty must be one of {EMPTY_CONVENTIONS}, got {empty!r}")
    classes = task_classes(task)
    frames = task_labels(dataset[0], task).shape[0]
    counts = {c: ClassCounts(np.zeros(frames, np.int64), np.zeros(frames, np.int64)) for c in classes[1:]}
    for s in dataset:
        cur, fut = predictor(s)
        _accumulate(counts, np.asarray(cur), np.asarray(fut), task_labels(s, task), classes, empty)

    iou_c, iou_f, span = {}, {}, {}
    for c, cc in counts.items():
        iou_c[c] = _ratio(int(cc.inter[0]), int(cc.union[0]), empty)
        iou_f[c] = [_ratio(int(i), int(u), empty) for i, u in zip(cc.inter[1:], cc.union[1:])]
        if average == "micro":
            span[c] = _ratio(int(cc.inter[1:].sum()), int(cc.union[1:].sum()), empty)
        else:
            vals = [v for v in cc.frame_ious if not np.isnan(v)]
            span[c] = float(np.mean(vals)) if vals else float("nan")
    return IoUReport(tuple(classes[1:]), iou_c, iou_f, span, len(dataset), average, empty)


def baseline_copy_last(task: str):
    """Predictor repeating the current-frame labels at every horizon."""

    def predict(s: SceneSample):
        labels = task_labels(s, task)
        cur = labels[0]
        return cur, np.repeat(cur[None], labels.shape[0] - 1, axis=0)

    return predict


def oracle(task: str):
    """Predictor returning the ground truth."""

    def predict(s: SceneSample):
        labels = task_labels(s, task)
        return labels[0], labels[1:]

    return predict


def model_predictor(model):
    return model.predict_grids
