"""Full forecasting pipeline: Observer -> Forecaster -> Refiner -> Predictor.

By default the occupancy and flow branches run unshared Observer/Forecaster/
Refiner stacks (``dual_pipeline``); the occupancy head decodes the occupancy
branch and the flow head decodes the flow branch.

Ablations (``ModelConfig.ablate``):

* ``observer``   - the aggregator is skipped; the observation only goes through
  the channel-reducing stem.
* ``forecaster`` - a single static per-voxel linear layer replaces the
  condition generator + hypernetwork.
* ``refiner``    - the forecast features go straight to the heads.
* ``all``        - all three at once: stem, one linear layer, heads.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .forecaster import Forecaster, StaticForecaster
from .geometry import GridSpec, concat_pose_channels
from .observer import E4AConfig, Observer
from .predictor import Head, Prediction, task_classes
from .refiner import Refiner
from .scene import SceneSample, aligned_observation
from .tensor import ConfigError, Conv, ParamStore, Tensor, as_tensor, no_grad
from .tensor.profile import scope

ABLATIONS = ("observer", "forecaster", "refiner")


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 8
    levels: int = 2
    window: int = 4
    heads: int = 2
    variant: str = "e4a"
    act: str = "relu"
    dual_pipeline: bool = True
    flow_head: bool = True
    share_refiner_e4a: bool = False
    hyper_scale: float = 0.01
    head_hidden: int = 8
    ablate: tuple = ()

    def __post_init__(self):
        abl = tuple(self.ablate)
        if "all" in abl:
            abl = ABLATIONS
        bad = set(abl) - set(ABLATIONS)
        if bad:
            raise ConfigError(f"unknown ablation(s) {sorted(bad)}")
        object.__setattr__(self, "ablate", tuple(a for a in ABLATIONS if a in abl))

    def e4a(self, max_len: int) -> E4AConfig:
        return E4AConfig(self.channels, self.levels, self.window, self.heads, max_len, self.variant, self.act)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class Dims:
    in_channels: int  # C_in before pose channels
    obs_frames: int
    future_frames: int
    spatial: tuple
    task: str = "inflated_gmo"

    @property
    def classes(self):
        return len(task_classes(self.task))


class Branch:
    def __init__(self, store: ParamStore, name: str, cfg: ModelConfig, dims: Dims):
        c, t, tf = cfg.channels, dims.obs_frames, dims.future_frames
        e4a = cfg.e4a(t + tf)
        self.observer = Observer(store, f"{name}.observer", dims.in_channels + 6, e4a, dims.spatial,
                                 aggregate="observer" not in cfg.ablate)
        if "forecaster" in cfg.ablate:
            self.forecaster = StaticForecaster(store, f"{name}.forecaster", t, tf, c)
        else:
            self.forecaster = Forecaster(store, f"{name}.forecaster", t, tf, c, cfg.act, cfg.hyper_scale)
        self.refiner = None
        if "refiner" not in cfg.ablate:
            if cfg.variant != "e4a":
                e4a = dataclasses.replace(e4a, variant="e4a")
            shared = self.observer.agg if cfg.share_refiner_e4a and cfg.variant == "e4a" else None
            self.refiner = Refiner(store, f"{name}.refiner", e4a, shared=shared)

    def __call__(self, f_motion: Tensor):
        with scope("observer"):
            o_obs = self.observer(f_motion)
        with scope("forecaster"):
            fut = self.forecaster(o_obs)
        if self.refiner is None:
            return o_obs, fut
        with scope("refiner"):
            return o_obs, self.refiner(o_obs, fut)


class ForecastModel:
    def __init__(self, cfg: ModelConfig, dims: Dims, seed: int = 0, store: ParamStore | None = None,
                 spec: GridSpec | None = None):
        self.cfg, self.dims, self.spec = cfg, dims, spec
        self.store = store if store is not None else ParamStore(seed)
        s = self.store
        self.occ_branch = Branch(s, "occ", cfg, dims)
        self.flow_branch = None
        if cfg.flow_head and cfg.dual_pipeline:
            self.flow_branch = Branch(s, "flow", cfg, dims)
        self.occ_head = Head(s, "head.occ", cfg.channels, dims.classes, cfg.head_hidden)
        self.flow_head = Head(s, "head.flow", cfg.channels, 3, cfg.head_hidden) if cfg.flow_head else None

    def forward(self, f_motion) -> Prediction:
        f_motion = as_tensor(f_motion)
        with scope("occ"):
            o_obs, v = self.occ_branch(f_motion)
        with scope("head.occ"):
            occ = self.occ_head(v)
            cur = self.occ_head(o_obs[-1:])
        flow = None
        if self.flow_head is not None:
            if self.flow_branch is not None:
                with scope("flow"):
                    _, vf = self.flow_branch(f_motion)
            else:
                vf = v
            with scope("head.flow"):
                flow = self.flow_head(vf)
        return Prediction(occ, cur, flow)

    __call__ = forward

    def predict_grids(self, sample: SceneSample):
        if self.spec is None:
            raise ConfigError("model was built without a GridSpec; cannot align observations")
        with no_grad():
            p = self.forward(motion_features(sample, self.spec))
        return p.classes()


class SingleLinearModel(ForecastModel):
    """Stem + one per-voxel linear layer + heads, built without the ablation flags.

    Parameter names coincide with ``ForecastModel`` under ``ablate=("all",)``.
    """

    def __init__(self, cfg: ModelConfig, dims: Dims, seed: int = 0, store: ParamStore | None = None,
                 spec: GridSpec | None = None):
        cfg = dataclasses.replace(cfg, ablate=())
        self.cfg, self.dims, self.spec = cfg, dims, spec
        self.store = store if store is not None else ParamStore(seed)
        s = self.store
        self.occ_branch = _LinearBranch(s, "occ", cfg, dims)
        self.flow_branch = _LinearBranch(s, "flow", cfg, dims) if cfg.flow_head and cfg.dual_pipeline else None
        self.occ_head = Head(s, "head.occ", cfg.channels, dims.classes, cfg.head_hidden)
        self.flow_head = Head(s, "head.flow", cfg.channels, 3, cfg.head_hidden) if cfg.flow_head else None


class _LinearBranch:
    def __init__(self, store, name, cfg, dims):
        self.reduce = Conv(store, f"{name}.observer.reduce", dims.in_channels + 6, cfg.channels, kernel=1)
        self.linear = StaticForecaster(store, f"{name}.forecaster", dims.obs_frames, dims.future_frames, cfg.channels)

    def __call__(self, f_motion):
        o = self.reduce(f_motion)
        return o, self.linear(o)


def motion_features(sample: SceneSample, spec: GridSpec) -> np.ndarray:
    """Aligned observation features with the 6 pose channels appended, (T, C_in+6, X, Y, Z)."""
    feats = aligned_observation(sample, spec)
    return concat_pose_channels(feats, sample.poses)
