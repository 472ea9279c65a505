import json

import numpy as np
import pytest

from occforecast import instrumented as ins
from occforecast.complexity import (VARIANTS, CostReport, compare_variants, count_flops, count_params,
                                    observer_cost, variants_json, variants_table)
from occforecast.model import Dims, ForecastModel, ModelConfig
from occforecast.observer import E4AConfig
from occforecast.tensor import ConfigError, Conv, Linear, ParamStore, ShapeError, ops, tensor
from occforecast.tensor.profile import recording

TOY = Dims(3, 3, 4, (32, 32, 8))


def _recorded(fn):
    with recording() as rec:
        fn()
    return rec.total_flops


def test_param_count_examples():
    s = ParamStore(0)
    Linear(s, "fc", 4, 3)
    assert count_params(s).total_params == 15
    s = ParamStore(0)
    Conv(s, "conv", 2, 4, kernel=3)
    assert count_params(s).total_params == 220


def test_linear_flops_example(rng):
    x, w, b = rng.standard_normal((1, 4)), rng.standard_normal((4, 3)), rng.standard_normal(3)
    assert _recorded(lambda: ops.linear(tensor(x), tensor(w), tensor(b))) == 27
    ct = ins.Counter()
    ins.linear(ct, x, w, b)
    assert ct.flops == 27


def test_conv_flops_example(rng):
    x, w, b = rng.standard_normal((1, 1, 4, 4, 4)), rng.standard_normal((1, 1, 3, 3, 3)), rng.standard_normal(1)
    assert _recorded(lambda: ops.conv(tensor(x), tensor(w), tensor(b), 1, 1)) == 3456 + 64
    ct = ins.Counter()
    out = ins.conv(ct, x, w, b, 1, 1)
    assert ct.flops == 3456 + 64
    assert np.allclose(out, ops.conv(tensor(x), tensor(w), tensor(b), 1, 1).data)


def test_gap_flops_example(rng):
    x = rng.standard_normal((3, 5, 7))
    assert _recorded(lambda: ops.gap(tensor(x), (1, 2))) == 3 * 35
    ct = ins.Counter()
    ins.gap(ct, x, (1, 2))
    assert ct.flops == 3 * 35


def test_whole_model_params_match_enumeration():
    m = ForecastModel(ModelConfig(), TOY)
    rep = count_params(m)
    assert rep.total_params == sum(p.data.size for _, p in m.store.items())
    assert rep.total_params == m.store.num_params()
    assert set(rep.params) >= {"occ.observer", "occ.forecaster", "occ.refiner", "head.occ"}


def test_report_totals_are_block_sums():
    m = ForecastModel(ModelConfig(), TOY)
    rep = count_flops(m, (3, 9, 32, 32, 8))
    assert rep.total_flops == sum(rep.flops.values()) > 0
    coarse = count_flops(m, (3, 9, 32, 32, 8), depth=1)
    assert coarse.total_flops == rep.total_flops
    assert set(coarse.flops) == {"occ", "flow", "head"}
    assert rep.peak_activation <= rep.total_activations


def test_params_independent_of_shape_and_flops_scale():
    cfg = E4AConfig(channels=8, levels=2, window=4, max_len=7)
    small = observer_cost(cfg, 8, 3, (32, 32, 8))
    big = observer_cost(cfg, 8, 3, (64, 64, 8))
    assert small.total_params == big.total_params
    reduce_small = small.flops["observer.reduce"]
    assert big.flops["observer.reduce"] == 4 * reduce_small
    assert big.total_flops > small.total_flops


def test_full_resolution_conv_flops_scale_by_four(rng):
    w, b = rng.standard_normal((4, 2, 3, 3, 3)), rng.standard_normal(4)
    a = _recorded(lambda: ops.conv(tensor(np.zeros((1, 2, 8, 8, 4))), tensor(w), tensor(b), 1, 1))
    c = _recorded(lambda: ops.conv(tensor(np.zeros((1, 2, 16, 16, 4))), tensor(w), tensor(b), 1, 1))
    assert c == 4 * a


def test_e4a_cheaper_than_dense_at_toy_shape():
    reps = compare_variants(ModelConfig(), TOY)
    assert set(reps) == set(VARIANTS) | {"full"}
    assert reps["e4a"].total_flops < reps["dense"].total_flops
    assert reps["e4a"].total_params == reps["dense"].total_params
    assert reps["tpv"].total_params > reps["bev"].total_params
    assert "dense" in variants_table(reps)
    back = CostReport.from_dict(json.loads(variants_json(reps))["full"])
    assert back.total_flops == reps["full"].total_flops


def test_count_flops_rejects_bad_shape():
    m = ForecastModel(ModelConfig(), TOY)
    with pytest.raises(ShapeError):
        count_flops(m, (3, 8, 32, 32, 8))
    with pytest.raises(ShapeError):
        count_flops(m, (3, 9, 32, 32))
    with pytest.raises(ConfigError):
        count_flops(m, (3, 9, 30, 32, 8))
