import dataclasses
import json

import numpy as np
import pytest

from occforecast import cli, config, dataio
from occforecast.config import RunConfig, RunManifest
from occforecast.metrics import IoUReport
from occforecast.model import ForecastModel, ModelConfig, SingleLinearModel, motion_features
from occforecast.scene import generate_scene
from occforecast.tensor import ConfigError, no_grad, records

SMALL = {
    "world": {"spec": {"x_range": [0, 1.6], "y_range": [0, 1.6], "z_range": [0, 0.8], "resolution": 0.2},
              "gmo_size_xy": [2, 3], "gmo_size_z": [1, 2], "n_gmo": [1, 2], "n_gso": [0, 1], "world_margin": 4},
    "model": {"channels": 4, "levels": 1, "window": 2, "head_hidden": 4},
    "train": {"steps": 3, "lr": 0.01},
    "data": {"n_train": 3, "n_eval": 2},
}


@pytest.fixture
def small_cfg(tmp_path, monkeypatch):
    monkeypatch.delenv("OCCF_DATA_DIR", raising=False)
    monkeypatch.delenv("OCCF_OUT_DIR", raising=False)
    raw = json.loads(json.dumps(SMALL))
    raw["paths"] = {"data_dir": str(tmp_path / "data"), "out_dir": str(tmp_path / "run")}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    return path


def test_defaults_validate_and_roundtrip():
    cfg = RunConfig()
    assert cfg.dims.spatial == (32, 32, 8)
    back = config.from_dict(json.loads(cfg.to_json()))
    assert back == cfg and back.hash() == cfg.hash()


def test_hash_ignores_key_order():
    a = config.config_hash({"a": 1, "b": [1, 2], "c": {"x": 0, "y": 1}})
    b = config.config_hash({"c": {"y": 1, "x": 0}, "b": (1, 2), "a": 1})
    assert a == b and len(a) == 64
    assert a != config.config_hash({"a": 2, "b": [1, 2], "c": {"x": 0, "y": 1}})


@pytest.mark.parametrize("raw, where", [
    ({"train": {"steps": -1}}, "train.steps"),
    ({"train": {"batch": 0}}, "train.batch"),
    ({"model": {"window": 3}}, "model"),
    ({"model": {"levels": 4}}, "model"),
    ({"model": {"ablate": ["predictor"]}}, "model"),
    ({"model": {"chanels": 4}}, "model.chanels"),
    ({"world": {"spec": {"x_range": [0, 1]}}}, "world.spec"),
    ({"task": "semantic"}, "task"),
    ({"version": 2}, "version"),
    ({"extra": {}}, "extra"),
])
def test_validation_names_the_field(raw, where):
    with pytest.raises(ConfigError) as err:
        config.from_dict(raw)
    assert str(err.value).startswith(where)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        config.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError):
        config.load(bad)


def test_env_overrides_paths(monkeypatch):
    monkeypatch.setenv("OCCF_DATA_DIR", "/somewhere/data")
    monkeypatch.setenv("OCCF_OUT_DIR", "/somewhere/out")
    cfg = config.from_dict({})
    assert (cfg.paths.data_dir, cfg.paths.out_dir) == ("/somewhere/data", "/somewhere/out")


def test_exit_codes(small_cfg, tmp_path, capsys):
    assert cli.run(["analyze", "--config", str(tmp_path / "nope.json")]) == cli.EXIT_CONFIG
    assert cli.run(["eval", "--config", str(small_cfg)]) == cli.EXIT_CONFIG
    assert cli.run(["eval", "--config", str(small_cfg), "--checkpoint", str(tmp_path / "x.ocfr")]) == cli.EXIT_RUNTIME
    with pytest.raises(SystemExit):
        cli.run(["bogus"])
    assert cli.run(["analyze", "--config", str(small_cfg)]) == cli.EXIT_OK
    assert "dense" in capsys.readouterr().out


def test_gen_train_eval_export(small_cfg, tmp_path):
    data, run = tmp_path / "data", tmp_path / "run"
    assert cli.run(["gen", "--config", str(small_cfg)]) == 0
    first = (data / "manifest.json").read_text()
    assert cli.run(["gen", "--config", str(small_cfg), "--out", str(tmp_path / "again")]) == 0
    assert json.loads((tmp_path / "again" / "manifest.json").read_text()) == json.loads(first)

    assert cli.run(["train", "--config", str(small_cfg)]) == 0
    for f in ("config.json", "log.jsonl", "checkpoint.ocfr", "run_manifest.json"):
        assert (run / f).exists(), f
    man = RunManifest.from_json((run / "run_manifest.json").read_text())
    assert man.verify(run) == [] and man.config_hash == config.load(small_cfg).hash()
    assert len((run / "log.jsonl").read_text().splitlines()) == 3

    ck = str(run / "checkpoint.ocfr")
    assert cli.run(["eval", "--config", str(small_cfg), "--checkpoint", ck]) == 0
    reps = json.loads((run / "report.json").read_text())
    model = IoUReport.from_dict(reps["model"])
    assert set(reps) == {"model", "copy_last"} and model.samples == 2
    assert IoUReport.from_json(model.to_json()) == model

    assert cli.run(["export", "--config", str(small_cfg), "--checkpoint", ck, "--sample", "eval_00001"]) == 0
    gt = dataio.import_voxels(run / "eval_00001_gt.txt")
    assert np.array_equal(gt, dataio.read_sample(data, "eval_00001").gmo_inflated)
    assert cli.run(["export", "--config", str(small_cfg), "--checkpoint", ck, "--sample", "eval_09999"]) == 3


def test_zero_steps_checkpoint_is_init(small_cfg, tmp_path):
    cfg = cli.apply_overrides(config.load(small_cfg), out=tmp_path / "zero")
    cfg = cfg.replace(train=dataclasses.replace(cfg.train, steps=0))
    data = [generate_scene(cfg.world, 0)]
    tr = cli.cmd_train(cfg, data=data)
    assert tr.step == 0 and tr.log == []
    r = records.load(tmp_path / "zero" / "checkpoint.ocfr")
    init = cli.build_model(cfg)
    assert all(np.array_equal(r[f"param/{n}"], p.data) for n, p in init.store.items())


def test_empty_dataset_gen(small_cfg, tmp_path):
    cfg = config.load(small_cfg)
    cfg = cfg.replace(data=config.DataSettings(0, 0))
    man = cli.cmd_gen(cfg, tmp_path / "empty")
    assert all(v["samples"] == [] for v in man["splits"].values())
    assert dataio.read_split(tmp_path / "empty", "train") == []


def test_seed_override_changes_init(small_cfg):
    cfg = config.load(small_cfg)
    a = cli.build_model(cli.apply_overrides(cfg, seed=1))
    b = cli.build_model(cli.apply_overrides(cfg, seed=2))
    assert not np.array_equal(a.store["occ.observer.reduce.w"].data, b.store["occ.observer.reduce.w"].data)
    assert cli.apply_overrides(cfg, variant="tpv", ablate="refiner").model.ablate == ("refiner",)


def test_without_all_equals_single_linear_model(small_cfg):
    cfg = config.load(small_cfg)
    ablated = ForecastModel(ModelConfig(**{**cfg.model.to_dict(), "ablate": ("all",)}), cfg.dims, seed=4,
                            spec=cfg.world.spec)
    single = SingleLinearModel(cfg.model, cfg.dims, seed=4, spec=cfg.world.spec)
    assert ablated.store.names() == single.store.names()
    feats = motion_features(generate_scene(cfg.world, 0), cfg.world.spec)
    with no_grad():
        a, b = ablated(feats), single(feats)
    assert np.array_equal(a.occ_logits.data, b.occ_logits.data)
    assert np.array_equal(a.flow.data, b.flow.data)
