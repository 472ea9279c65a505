import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from occforecast.metrics import IoUReport, baseline_copy_last, evaluate, iou, oracle
from occforecast.scene import ObjectSpec, WorldConfig, generate_dataset, generate_scene

from oracles import set_iou

grids = arrays(np.bool_, (4, 3, 2))


def _world(*objects, **kw):
    return WorldConfig(objects=tuple(objects), ego_speed=0.0, ego_yaw_rate=0.0, **kw)


def test_iou_basic():
    a = np.zeros((4, 4, 4), bool)
    b = a.copy()
    assert iou(a, b) == 100.0
    assert np.isnan(iou(a, b, empty="skip"))
    a[0, 0, 0] = True
    assert iou(a, b) == 0.0
    b[0, 0, :2] = True
    assert iou(a, b) == 50.0
    with pytest.raises(ValueError):
        iou(a, b[:2])


@settings(max_examples=60, deadline=None)
@given(grids, grids, st.randoms(use_true_random=False))
def test_iou_oracle_symmetry_permutation(a, b, r):
    assert abs(iou(a, b) - set_iou(a, b)) <= 1e-10 * max(1.0, set_iou(a, b))
    assert iou(a, b) == iou(b, a)
    perm = list(range(a.size))
    r.shuffle(perm)
    pa, pb = a.ravel()[perm].reshape(a.shape), b.ravel()[perm].reshape(b.shape)
    assert iou(pa, pb) == iou(a, b)


def test_copy_last_shifted_box():
    ds = [generate_scene(_world(ObjectSpec((10.0, 10.0, 1.0), (2, 2, 2), (1.0, 0.0, 0.0))), 0)]
    rep = evaluate(baseline_copy_last("fine_gmo"), ds, "fine_gmo")
    assert rep.iou_c["gmo"] == 100.0
    assert rep.iou_f["gmo"][0] == pytest.approx(100 * 4 / 12)
    assert rep.iou_f["gmo"][1:] == [0.0, 0.0, 0.0]
    assert rep.iou_f_span["gmo"] == pytest.approx(100 * 4 / (12 + 16 * 3))


def test_static_world_perfect():
    ds = [generate_scene(_world(ObjectSpec((5.0, 5.0, 0.0), (3, 4, 2), movable=True)), 0)]
    rep = evaluate(baseline_copy_last("inflated_gmo"), ds, "inflated_gmo")
    assert rep.iou_f["gmo"] == [100.0] * 4 and rep.iou_f_span["gmo"] == 100.0


def test_empty_world_convention():
    ds = [generate_scene(_world(ObjectSpec((2.0, 2.0, 0.0), (4, 1, 3), movable=False)), 0)]
    assert not ds[0].gmo_fine.any()
    assert evaluate(oracle("fine_gmo"), ds, "fine_gmo").iou_f_span["gmo"] == 100.0
    assert np.isnan(evaluate(oracle("fine_gmo"), ds, "fine_gmo", empty="skip").iou_f_span["gmo"])


def test_translating_world_copy_last_monotone():
    ds = generate_dataset(WorldConfig(), 10, 5)
    f = evaluate(baseline_copy_last("inflated_gmo"), ds, "inflated_gmo").iou_f["gmo"]
    assert all(a >= b for a, b in zip(f, f[1:]))


def test_micro_average_properties():
    ds = generate_dataset(WorldConfig(), 6, 11)
    task = "fine_gmo_gso"
    rep = evaluate(baseline_copy_last(task), ds, task)
    twice = evaluate(baseline_copy_last(task), ds + ds, task)
    rev = evaluate(baseline_copy_last(task), ds[::-1], task)
    assert twice.iou_f_span == rep.iou_f_span and rev.to_dict() == rep.to_dict() | {"samples": 6}
    for c in rep.classes:
        assert min(rep.iou_f[c]) - 1e-9 <= rep.iou_f_span[c] <= max(rep.iou_f[c]) + 1e-9
    assert evaluate(oracle(task), ds, task).mean() == 100.0


def test_micro_equals_frame_iou_when_frames_identical():
    ds = [generate_scene(_world(ObjectSpec((5.0, 5.0, 0.0), (3, 4, 2))), 0)]

    def shifted(s):
        g = s.gmo_fine.astype(np.int64)
        p = np.roll(g, 1, axis=1)
        return p[0], p[1:]

    rep = evaluate(shifted, ds, "fine_gmo")
    assert rep.iou_f_span["gmo"] == pytest.approx(rep.iou_f["gmo"][0])
    assert len(set(rep.iou_f["gmo"])) == 1


def test_macro_toggle_and_errors():
    ds = generate_dataset(WorldConfig(), 3, 1)
    rep = evaluate(baseline_copy_last("inflated_gmo"), ds, "inflated_gmo", average="macro")
    assert 0.0 <= rep.iou_f_span["gmo"] <= 100.0 and rep.average == "macro"
    with pytest.raises(ValueError):
        evaluate(oracle("inflated_gmo"), [], "inflated_gmo")
    with pytest.raises(ValueError):
        evaluate(oracle("inflated_gmo"), ds, "inflated_gmo", average="median")
    with pytest.raises(ValueError):
        evaluate(lambda s: (s.gmo_fine[0], s.gmo_fine[1:3]), ds, "inflated_gmo")


def test_report_roundtrip_and_table():
    ds = generate_dataset(WorldConfig(), 3, 1)
    rep = evaluate(baseline_copy_last("fine_gmo_gso"), ds, "fine_gmo_gso")
    back = IoUReport.from_json(rep.to_json())
    assert back == rep and back.horizons == 4
    text = rep.table("copy")
    assert "IoU_f(4)" in text and "gso" in text
    assert len(rep.mean("iou_f")) == 4
