"""Run configuration: a single versioned JSON document.

Schema (version 1), every section optional and filled from defaults::

    {
      "version": 1,
      "world": {... WorldConfig fields, "spec": {x_range, y_range, z_range, resolution}},
      "model": {... ModelConfig fields},
      "task":  "inflated_gmo" | "fine_gmo" | "fine_gmo_gso",
      "train": {steps, batch, lr, weight_decay, warmup, seed, checkpoint_every},
      "data":  {n_train, n_eval, train_seed, eval_seed},
      "paths": {data_dir, out_dir}
    }

``OCCF_DATA_DIR`` and ``OCCF_OUT_DIR`` override the two paths.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .geometry import GridSpec
from .model import Dims, ModelConfig
from .predictor import TASKS
from .scene import WorldConfig
from .tensor import ConfigError
from .training import TrainSettings

VERSION = 1


@dataclass(frozen=True)
class DataSettings:
    n_train: int = 200
    n_eval: int = 50
    train_seed: int = 1
    eval_seed: int = 2


@dataclass(frozen=True)
class Paths:
    data_dir: str = "data"
    out_dir: str = "runs"


@dataclass(frozen=True)
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    task: str = "inflated_gmo"
    train: TrainSettings = field(default_factory=TrainSettings)
    data: DataSettings = field(default_factory=DataSettings)
    paths: Paths = field(default_factory=Paths)
    version: int = VERSION

    def __post_init__(self):
        validate(self)

    @property
    def dims(self) -> Dims:
        w = self.world
        return Dims(w.feature_channels, w.obs_frames, w.future_frames, w.spec.extents, self.task)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "world": self.world.to_dict(),
            "model": _plain(dataclasses.asdict(self.model)),
            "task": self.task,
            "train": {k: v for k, v in dataclasses.asdict(self.train).items() if k != "task"},
            "data": dataclasses.asdict(self.data),
            "paths": dataclasses.asdict(self.paths),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def hash(self) -> str:
        return config_hash(self.to_dict())

    def replace(self, **sections) -> "RunConfig":
        return dataclasses.replace(self, **sections)


def _plain(v):
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v


def config_hash(d: dict) -> str:
    """sha256 of the canonical JSON form; independent of key order."""
    return hashlib.sha256(json.dumps(_plain(d), sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _section(cls, raw, path: str, build=None):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object, got {type(raw).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    for k in raw:
        if k not in known:
            raise ConfigError(f"{path}.{k}: unknown field")
    try:
        return build(raw) if build else cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()})
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from None
    except KeyError as e:
        raise ConfigError(f"{path}: missing field {e}") from None
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from None


def _check(cond: bool, path: str, msg: str):
    if not cond:
        raise ConfigError(f"{path}: {msg}")


def validate(cfg: RunConfig):
    """Reject bad values and divisibility violations before any compute happens."""
    _check(cfg.version == VERSION, "version", f"unsupported version {cfg.version}, expected {VERSION}")
    _check(cfg.task in TASKS, "task", f"unknown task {cfg.task!r}; expected one of {sorted(TASKS)}")
    t = cfg.train
    _check(isinstance(t.steps, int) and t.steps >= 0, "train.steps", "must be an integer >= 0")
    _check(isinstance(t.batch, int) and t.batch >= 1, "train.batch", "must be an integer >= 1")
    _check(t.lr >= 0, "train.lr", "must be >= 0")
    _check(t.weight_decay >= 0, "train.weight_decay", "must be >= 0")
    _check(t.warmup >= 0, "train.warmup", "must be >= 0")
    _check(t.checkpoint_every >= 0, "train.checkpoint_every", "must be >= 0")
    d = cfg.data
    _check(d.n_train >= 0, "data.n_train", "must be >= 0")
    _check(d.n_eval >= 0, "data.n_eval", "must be >= 0")
    m = cfg.model
    _check(m.channels >= 1, "model.channels", "must be >= 1")
    _check(m.levels >= 0, "model.levels", "must be >= 0")
    _check(m.window >= 1, "model.window", "must be >= 1")
    _check(m.heads >= 1, "model.heads", "must be >= 1")
    w = cfg.world
    try:
        m.e4a(w.obs_frames + w.future_frames).check(w.spec.extents)
        dataclasses.replace(m.e4a(w.obs_frames + w.future_frames), variant="e4a").check(w.spec.extents)
    except ConfigError as e:
        raise ConfigError(f"model: {e}") from None


def from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("(root): expected an object")
    known = {"version", "world", "model", "task", "train", "data", "paths"}
    for k in raw:
        if k not in known:
            raise ConfigError(f"{k}: unknown section")
    spec = (raw.get("world") or {}).get("spec")
    if spec is not None:
        _section(GridSpec, spec, "world.spec", GridSpec.from_dict)
    world = _section(WorldConfig, raw.get("world"), "world", WorldConfig.from_dict)
    model = _section(ModelConfig, raw.get("model"), "model")
    task = raw.get("task", "inflated_gmo")
    train = _section(TrainSettings, raw.get("train"), "train")
    train = dataclasses.replace(train, task=task)
    data = _section(DataSettings, raw.get("data"), "data")
    paths = _section(Paths, raw.get("paths"), "paths")
    paths = Paths(os.environ.get("OCCF_DATA_DIR", paths.data_dir), os.environ.get("OCCF_OUT_DIR", paths.out_dir))
    return RunConfig(world, model, task, train, data, paths, raw.get("version", VERSION))


def load(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return from_dict(raw)


def save(cfg: RunConfig, path):
    Path(path).write_text(cfg.to_json() + "\n")


@dataclass
class RunManifest:
    config_hash: str
    code_version: str
    seed: int
    started: str
    finished: str = ""
    files: dict = field(default_factory=dict)  # relative path -> sha256

    def add(self, root, path):
        p = Path(path)
        self.files[str(p.relative_to(root))] = file_digest(p)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))

    def verify(self, root) -> list:
        """Relative paths whose current digest differs from the recorded one."""
        return [k for k, v in self.files.items() if not (Path(root) / k).exists() or file_digest(Path(root) / k) != v]


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
