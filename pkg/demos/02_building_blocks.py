"""
The forecasting pipeline, block by block
=======================================

Walks a batch of motion features through the observer, the conditional
forecaster, the refiner and the heads, printing shapes and checking the
fixed points that hold at initialization.
"""

import numpy as np

from occforecast.forecaster import fold_time, selection_weights, voxel_map
from occforecast.model import Dims, ForecastModel, ModelConfig, motion_features
from occforecast.scene import WorldConfig, generate_scene
from occforecast.tensor import no_grad, tensor

cfg = WorldConfig()
sample = generate_scene(cfg, seed=0)

# Motion-aware input: aligned features plus six pose channels per frame.
f = motion_features(sample, cfg.spec)
print("motion features", f.shape)

dims = Dims(cfg.feature_channels, cfg.obs_frames, cfg.future_frames, cfg.spec.extents)
model = ForecastModel(ModelConfig(), dims, seed=0, spec=cfg.spec)
branch = model.occ_branch

with no_grad():
    reduced = branch.observer.reduce_channels(tensor(f))
    observed = branch.observer(tensor(f))
    print("observer:", reduced.shape, "->", observed.shape)

    # The aggregation block ends in a zero-initialized projection, so before
    # training it passes its input through untouched.
    print("aggregation is the identity at init:", np.array_equal(reduced.data, observed.data))

    # The forecaster turns a per-scene condition into a (T*C, T'*C) matrix and
    # applies it at every voxel.
    fc = branch.forecaster
    cond = fc.condition(observed)
    w = fc.adaptive_weights(cond)
    future = fc.forecast(fold_time(observed), w)
    print("condition", cond.shape, "weights", w.shape, "future features", future.shape)

    # A hand-written selection matrix shows what the per-voxel map can express:
    # here, copying the last observed frame into every future slot.
    copy = voxel_map(fold_time(observed), tensor(selection_weights(3, 4, 8)), 4, 8)
    print("selection matrix copies frame t:", all(np.array_equal(copy.data[j], observed.data[-1]) for j in range(4)))

    refined = branch.refiner(observed, future)
    print("refiner output", refined.shape, "identity at init:", np.array_equal(refined.data, future.data))

    p = model(f)
    print("occupancy logits", p.occ_logits.shape, "current-frame logits", p.current_occ_logits.shape,
          "flow", p.flow.shape)

print("parameters:", model.store.num_params())
