"""Training campaign behind the learning-efficacy, ablation and horizon checks.

Every (variant, seed) run is cached as JSON under a key derived from the
campaign settings and the bytes of every source file that can change a
result, so an unchanged tree never retrains. Run this file directly to fill
the cache ahead of a test session::

    python tests/campaign.py            # all runs
    python tests/campaign.py full 0     # one run
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
import time
from pathlib import Path

import occforecast
from occforecast.metrics import baseline_copy_last, evaluate
from occforecast.model import Dims, ForecastModel, ModelConfig
from occforecast.scene import WorldConfig, generate_dataset
from occforecast.training import Trainer, TrainSettings

SEEDS = (0, 1, 2)
VARIANTS = {
    "full": (),
    "wo_observer": ("observer",),
    "wo_forecaster": ("forecaster",),
    "wo_refiner": ("refiner",),
    "wo_all": ("all",),
}
SETTINGS = {"n_train": 200, "n_eval": 50, "train_seed": 1, "eval_seed": 2, "steps": 2000, "lr": 3e-4,
            "task": "inflated_gmo"}
RESULT_SOURCES = ("tensor/*.py", "geometry.py", "scene.py", "observer.py", "forecaster.py", "refiner.py",
                  "predictor.py", "model.py", "training.py", "metrics.py")

_data: dict = {}


def cache_dir() -> Path:
    root = Path(os.environ.get("OCCF_ACCEPTANCE_CACHE", Path(__file__).resolve().parent.parent / ".acceptance_cache"))
    return root / campaign_key()


def campaign_key() -> str:
    h = hashlib.sha256(json.dumps(SETTINGS, sort_keys=True).encode())
    pkg = Path(occforecast.__file__).parent
    for pattern in RESULT_SOURCES:
        for f in sorted(pkg.glob(pattern)):
            h.update(f.relative_to(pkg).as_posix().encode())
            h.update(f.read_bytes())
    return h.hexdigest()[:16]


def world() -> WorldConfig:
    return WorldConfig()


def datasets():
    if not _data:
        w = world()
        _data["train"] = generate_dataset(w, SETTINGS["n_train"], SETTINGS["train_seed"])
        _data["eval"] = generate_dataset(w, SETTINGS["n_eval"], SETTINGS["eval_seed"])
    return _data["train"], _data["eval"]


def build(variant: str, seed: int) -> ForecastModel:
    w = world()
    dims = Dims(w.feature_channels, w.obs_frames, w.future_frames, w.spec.extents, SETTINGS["task"])
    cfg = ModelConfig(flow_head=False, ablate=VARIANTS[variant])
    return ForecastModel(cfg, dims, seed=seed, spec=w.spec)


def trainer(variant: str, seed: int) -> Trainer:
    train, _ = datasets()
    s = TrainSettings(steps=SETTINGS["steps"], lr=SETTINGS["lr"], seed=seed, task=SETTINGS["task"])
    return Trainer(build(variant, seed), train, s)


def baseline() -> dict:
    path = cache_dir() / "copy_last.json"
    if path.exists():
        return json.loads(path.read_text())
    _, ev = datasets()
    rep = evaluate(baseline_copy_last(SETTINGS["task"]), ev, SETTINGS["task"]).to_dict()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(rep))
    return rep


def run(variant: str, seed: int) -> dict:
    path = cache_dir() / f"{variant}_s{seed}.json"
    if path.exists():
        return json.loads(path.read_text())
    t0 = time.perf_counter()
    tr = trainer(variant, seed)
    tr.run()
    train_wall = time.perf_counter() - t0
    _, ev = datasets()
    rep = evaluate(tr.model.predict_grids, ev, SETTINGS["task"]).to_dict()
    out = {"variant": variant, "seed": seed, "report": rep, "loss": [r["total"] for r in tr.log],
           "train_seconds": train_wall, "params": tr.model.store.num_params()}
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(out))
    tmp.replace(path)
    return out


def all_runs() -> dict:
    return {(v, s): run(v, s) for s in SEEDS for v in VARIANTS}


if __name__ == "__main__":
    if len(sys.argv) == 3:
        todo = [(sys.argv[1], int(sys.argv[2]))]
    else:
        todo = [(v, s) for s in SEEDS for v in VARIANTS]
    print("cache", cache_dir(), flush=True)
    baseline()
    for v, s in todo:
        r = run(v, s)
        print(v, s, f"span={r['report']['iou_f_span']['gmo']:.2f}", f"{r['train_seconds']:.0f}s", flush=True)
