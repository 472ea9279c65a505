import numpy as np
import pytest

from occforecast.geometry import GridSpec
from occforecast.model import Dims, ForecastModel, ModelConfig
from occforecast.scene import WorldConfig, generate_dataset
from occforecast.tensor import ParamStore, records
from occforecast.training import (AdamW, NonFiniteLossError, Trainer, TrainSettings, checkpoint_meta, load_log,
                                  load_params, save_checkpoint, train_step)

WORLD = WorldConfig(spec=GridSpec((0, 1.6), (0, 1.6), (0, 0.8), 0.2), gmo_size_xy=(2, 3), gmo_size_z=(1, 2),
                    n_gmo=(1, 2), n_gso=(0, 1), world_margin=4)
DIMS = Dims(3, 3, 4, (8, 8, 4))
CFG = ModelConfig(channels=4, levels=1, window=2, head_hidden=4)


@pytest.fixture(scope="module")
def data():
    return generate_dataset(WORLD, 6, 0)


def _model(cfg=CFG, seed=0):
    return ForecastModel(cfg, DIMS, seed=seed, spec=WORLD.spec)


def _values(log):
    return [(r["step"], r["total"], r["occupancy"], r["flow"]) for r in log]


def test_adamw_first_step_closed_form():
    store = ParamStore(0)
    p = store.add("p", (4,), "normal")
    p0 = p.data.copy()
    g = np.array([0.5, -2.0, 1e-3, 0.0], dtype=p.dtype)
    p.grad = g
    opt = AdamW(store, lr=0.1, weight_decay=0.2)
    opt.step()
    expect = p0 * (1 - 0.1 * 0.2) - 0.1 * g / (np.abs(g) + 1e-8)
    assert np.allclose(p.data, expect, rtol=1e-6, atol=1e-7)


def test_adamw_two_steps_bias_correction():
    store = ParamStore(0)
    p = store.add("p", (1,), "zeros")
    opt = AdamW(store, lr=1.0, weight_decay=0.0)
    for g in (1.0, 3.0):
        p.grad = np.array([g], dtype=p.dtype)
        opt.step()
    m = (0.9 * 0.1 * 1 + 0.1 * 3) / (1 - 0.9 ** 2)
    v = (0.999 * 0.001 * 1 + 0.001 * 9) / (1 - 0.999 ** 2)
    assert p.data[0] == pytest.approx(-1.0 - m / (np.sqrt(v) + 1e-8), rel=1e-5)


def test_zero_lr_leaves_params_unchanged(data):
    m = _model()
    before = m.store.state_dict()
    tr = Trainer(m, data, TrainSettings(steps=3, lr=0.0))
    tr.run()
    assert tr.step == 3
    assert all(np.array_equal(before[n], p.data) for n, p in m.store.items())


def test_warmup_schedule():
    opt = AdamW(ParamStore(0), lr=1.0, warmup=4)
    rates = []
    for _ in range(6):
        rates.append(opt.current_lr())
        opt.t += 1
    assert rates == [0.25, 0.5, 0.75, 1.0, 1.0, 1.0]


def test_fixed_seed_retrain_is_bit_identical(data):
    logs = []
    for _ in range(2):
        tr = Trainer(_model(), data, TrainSettings(steps=6, lr=1e-2, batch=2))
        logs.append(_values(tr.run()))
    assert logs[0] == logs[1]
    other = Trainer(_model(), data, TrainSettings(steps=6, lr=1e-2, batch=2, seed=1)).run()
    assert _values(other) != logs[0]


def test_resume_equivalence(data, tmp_path):
    settings = TrainSettings(steps=8, lr=1e-2)
    full = Trainer(_model(), data, settings)
    full.run()

    first = Trainer(_model(), data, settings)
    first.run(until=3)
    first.save(tmp_path / "mid.ocfr", {"step": 3})
    second = Trainer(_model(seed=99), data, settings)
    second.resume(tmp_path / "mid.ocfr")
    assert second.step == 3
    second.run()
    assert _values(first.log + second.log) == _values(full.log)
    assert all(np.array_equal(full.model.store[n].data, p.data) for n, p in second.model.store.items())


def test_loss_decreases(data):
    tr = Trainer(_model(), data, TrainSettings(steps=50, lr=3e-3))
    log = tr.run()
    head = np.mean([r["total"] for r in log[:10]])
    tail = np.mean([r["total"] for r in log[-10:]])
    assert tail < head


def test_batch_order_is_a_permutation_per_epoch(data):
    tr = Trainer(_model(), data, TrainSettings(steps=10, batch=2))
    seen = [i for k in range(3) for i in tr.batch_indices(k)]
    assert sorted(seen) == list(range(6))


def test_log_file_and_periodic_checkpoints(data, tmp_path):
    tr = Trainer(_model(), data, TrainSettings(steps=4, lr=1e-2, checkpoint_every=2),
                 log_path=tmp_path / "log.jsonl", checkpoint_dir=tmp_path / "ck")
    tr.run()
    assert _values(load_log(tmp_path / "log.jsonl")) == _values(tr.log)
    assert sorted(p.name for p in (tmp_path / "ck").iterdir()) == ["step_000002.ocfr", "step_000004.ocfr"]


def test_checkpoint_roundtrip(tmp_path):
    m = _model()
    m.store.randomize(3)
    save_checkpoint(tmp_path / "c.ocfr", m.store, meta={"note": "x", "step": 0})
    r = records.load(tmp_path / "c.ocfr")
    fresh = _model()
    load_params(fresh.store, r)
    assert all(np.array_equal(m.store[n].data, p.data) for n, p in fresh.store.items())
    assert checkpoint_meta(r) == {"note": "x", "step": 0}
    with pytest.raises(KeyError):
        load_params(_model(ModelConfig(channels=4, levels=1, window=2, head_hidden=4, flow_head=False)).store, r)


def test_nonfinite_loss_reported(data):
    m = _model()
    m.store["head.occ.conv2.b"].data[:] = np.nan
    with pytest.raises(NonFiniteLossError) as err:
        train_step(m, data[:1], AdamW(m.store), "inflated_gmo")
    assert err.value.term == "occupancy" and err.value.sample_seed == data[0].seed


def test_empty_training_set():
    with pytest.raises(ValueError):
        Trainer(_model(), [], TrainSettings())


def test_flow_branch_does_not_change_occupancy_training(data):
    a = Trainer(_model(), data, TrainSettings(steps=4, lr=1e-2)).run()
    nf = ModelConfig(channels=4, levels=1, window=2, head_hidden=4, flow_head=False)
    b = Trainer(_model(nf), data, TrainSettings(steps=4, lr=1e-2)).run()
    assert [r["occupancy"] for r in a] == [r["occupancy"] for r in b]


def test_report_batch_mean(data):
    m = _model()
    r = train_step(m, data[:2], AdamW(m.store, lr=0.0), "inflated_gmo")
    assert float(r.total.data) == pytest.approx(r.occupancy + r.flow)
