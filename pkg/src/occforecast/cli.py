"""Command-line entry point: ``occforecast {gen,train,eval,analyze,export}``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, complexity, config, dataio, metrics
from .config import RunConfig, RunManifest
from .model import ForecastModel, motion_features
from .predictor import task_labels
from .tensor import ConfigError, no_grad, records
from .tensor.records import RecordFormatError
from .training import NonFiniteLossError, Trainer, load_params

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S")


def apply_overrides(cfg: RunConfig, seed=None, ablate=None, variant=None, out=None) -> RunConfig:
    model, train, paths = cfg.model, cfg.train, cfg.paths
    if ablate:
        model = dataclasses.replace(model, ablate=(ablate,))
    if variant:
        model = dataclasses.replace(model, variant=variant)
    if seed is not None:
        train = dataclasses.replace(train, seed=seed)
    if out:
        paths = dataclasses.replace(paths, out_dir=str(out))
    return cfg.replace(model=model, train=train, paths=paths)


def build_model(cfg: RunConfig) -> ForecastModel:
    return ForecastModel(cfg.model, cfg.dims, seed=cfg.train.seed, spec=cfg.world.spec)


def _write_manifest(cfg: RunConfig, out: Path, files, started: str):
    man = RunManifest(cfg.hash(), __version__, cfg.train.seed, started, _now())
    for f in files:
        man.add(out, f)
    (out / "run_manifest.json").write_text(man.to_json() + "\n")
    return man


def cmd_gen(cfg: RunConfig, out=None) -> dict:
    root = Path(out or cfg.paths.data_dir)
    d = cfg.data
    return dataio.write_dataset(root, cfg.world, {"train": (d.n_train, d.train_seed), "eval": (d.n_eval, d.eval_seed)})


def cmd_train(cfg: RunConfig, checkpoint=None, data=None) -> Trainer:
    """Train on the ``train`` split; resumes from ``checkpoint`` when given."""
    started = _now()
    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = data if data is not None else dataio.read_split(cfg.paths.data_dir, "train")
    model = build_model(cfg)
    ckpt_dir = out / "checkpoints"
    tr = Trainer(model, data, cfg.train, log_path=out / "log.jsonl", checkpoint_dir=ckpt_dir)
    if checkpoint:
        tr.resume(checkpoint)
    elif (out / "log.jsonl").exists():
        (out / "log.jsonl").unlink()
    (out / "config.json").write_text(cfg.to_json() + "\n")
    tr.run()
    final = out / "checkpoint.ocfr"
    tr.save(final, {"config_hash": cfg.hash(), "step": tr.step})
    files = [out / "config.json", out / "log.jsonl", final] + sorted(ckpt_dir.glob("*.ocfr"))
    _write_manifest(cfg, out, [f for f in files if f.exists()], started)
    return tr


def load_model(cfg: RunConfig, checkpoint) -> ForecastModel:
    model = build_model(cfg)
    load_params(model.store, records.load(checkpoint))
    return model


def cmd_eval(cfg: RunConfig, checkpoint, data=None) -> dict:
    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = data if data is not None else dataio.read_split(cfg.paths.data_dir, "eval")
    model = load_model(cfg, checkpoint)
    reports = {"model": metrics.evaluate(model.predict_grids, data, cfg.task),
               "copy_last": metrics.evaluate(metrics.baseline_copy_last(cfg.task), data, cfg.task)}
    (out / "report.json").write_text(json.dumps({k: r.to_dict() for k, r in reports.items()}, indent=2) + "\n")
    (out / "report.txt").write_text("\n\n".join(r.table(k) for k, r in reports.items()) + "\n")
    return reports


def cmd_analyze(cfg: RunConfig) -> dict:
    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reps = complexity.compare_variants(cfg.model, cfg.dims)
    (out / "cost.json").write_text(complexity.variants_json(reps) + "\n")
    (out / "cost.txt").write_text(complexity.variants_table(reps) + "\n\n" + reps["full"].table() + "\n")
    return reps


def cmd_export(cfg: RunConfig, checkpoint, sid: str, sample=None) -> list:
    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    s = sample if sample is not None else dataio.read_sample(cfg.paths.data_dir, sid)
    model = load_model(cfg, checkpoint)
    with no_grad():
        p = model(motion_features(s, cfg.world.spec))
    cur, fut = p.classes()
    pred = np.concatenate([cur[None], fut]).astype(np.uint8)
    gt = task_labels(s, cfg.task).astype(np.uint8)
    files = [out / f"{sid}_pred.txt", out / f"{sid}_gt.txt"]
    dataio.export_voxels(files[0], pred)
    dataio.export_voxels(files[1], gt)
    if p.flow is not None:
        files.append(out / f"{sid}_flow_pred.txt")
        dataio.export_flow(files[-1], p.flow.data, fut > 0)
    files.append(out / f"{sid}_flow_gt.txt")
    dataio.export_flow(files[-1], s.future_flow, s.future_gmo_fine > 0)
    return files


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="occforecast", description="Occupancy forecasting on synthetic voxel worlds.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False, model=False):
        p.add_argument("--config", help="run config (JSON); defaults apply when omitted")
        p.add_argument("--seed", type=int, help="override train.seed (also the init seed)")
        p.add_argument("--out", help="output directory")
        if checkpoint:
            p.add_argument("--checkpoint", help="checkpoint file")
        if model:
            p.add_argument("--ablate", choices=("observer", "forecaster", "refiner", "all"))
            p.add_argument("--variant", choices=("e4a", "bev", "tpv", "dense"))

    common(sub.add_parser("gen", help="write the train/eval dataset"))
    common(sub.add_parser("train", help="train a model; --checkpoint resumes"), checkpoint=True, model=True)
    common(sub.add_parser("eval", help="IoU report for a checkpoint"), checkpoint=True, model=True)
    common(sub.add_parser("analyze", help="parameter and FLOP report"), model=True)
    ex = sub.add_parser("export", help="voxel-list export of one sample")
    common(ex, checkpoint=True, model=True)
    ex.add_argument("--sample", required=True, help="sample id, e.g. eval_00000")
    return ap


def run(argv=None) -> int:
    args = parser().parse_args(argv)
    try:
        cfg = config.load(args.config) if args.config else RunConfig()
        cfg = apply_overrides(cfg, args.seed, getattr(args, "ablate", None), getattr(args, "variant", None),
                              args.out if args.command != "gen" else None)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "gen":
            man = cmd_gen(cfg, args.out)
            n = {k: len(v["samples"]) for k, v in man["splits"].items()}
            print(f"wrote {n} samples to {args.out or cfg.paths.data_dir}")
        elif args.command == "train":
            tr = cmd_train(cfg, args.checkpoint)
            last = tr.log[-1]["total"] if tr.log else float("nan")
            print(f"trained to step {tr.step}; last loss {last:.4f}; outputs in {cfg.paths.out_dir}")
        elif args.command == "eval":
            if not args.checkpoint:
                raise ConfigError("eval needs --checkpoint")
            reps = cmd_eval(cfg, args.checkpoint)
            print("\n\n".join(r.table(k) for k, r in reps.items()))
        elif args.command == "analyze":
            reps = cmd_analyze(cfg)
            print(complexity.variants_table(reps))
        elif args.command == "export":
            if not args.checkpoint:
                raise ConfigError("export needs --checkpoint")
            for f in cmd_export(cfg, args.checkpoint, args.sample):
                print(f)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, KeyError, ValueError, RecordFormatError, NonFiniteLossError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
