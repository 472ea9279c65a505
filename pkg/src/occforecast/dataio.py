"""Dataset files on disk and plain-text voxel-list exports.

Dataset layout::

    <root>/manifest.json          config hash, world config, per-split sample inventory
    <root>/<split>/<id>.ocfr      one SceneSample per record container

Voxel-list text format (one file per grid kind)::

    # occforecast voxels v1
    # frames T extents X Y Z
    # frame x y z class          (or: frame x y z dx dy dz for flow files)
    0 12 3 1 1
    ...

Only nonzero voxels are listed, so an empty grid gives a header-only file.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import config_hash, file_digest
from .scene import SceneSample, WorldConfig, generate_dataset
from .tensor import records

HEADER = "# occforecast voxels v1"


def sample_id(split: str, i: int) -> str:
    return f"{split}_{i:05d}"


def write_dataset(root, world: WorldConfig, splits: dict) -> dict:
    """``splits`` maps split name -> (n, base_seed). Returns the manifest dict."""
    root = Path(root)
    manifest = {"config_hash": config_hash(world.to_dict()), "world": world.to_dict(), "splits": {}}
    for split, (n, base_seed) in splits.items():
        (root / split).mkdir(parents=True, exist_ok=True)
        entries = []
        for i, s in enumerate(generate_dataset(world, n, base_seed)):
            sid = sample_id(split, i)
            path = root / split / f"{sid}.ocfr"
            records.save(path, s.to_records(), compress=True)
            entries.append({"id": sid, "seed": s.seed, "file": f"{split}/{sid}.ocfr", "sha256": file_digest(path)})
        manifest["splits"][split] = {"base_seed": base_seed, "samples": entries}
    root.mkdir(parents=True, exist_ok=True)
    text = json.dumps(manifest, indent=2, sort_keys=True)
    (root / "manifest.json").write_text(text + "\n")
    return json.loads(text)


def read_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no dataset manifest at {path}")
    return json.loads(path.read_text())


def read_split(root, split: str) -> list:
    man = read_manifest(root)
    if split not in man["splits"]:
        raise KeyError(f"split {split!r} not in dataset (have {sorted(man['splits'])})")
    return [SceneSample.from_records(records.load(Path(root) / e["file"])) for e in man["splits"][split]["samples"]]


def read_sample(root, sid: str) -> SceneSample:
    for split in read_manifest(root)["splits"].values():
        for e in split["samples"]:
            if e["id"] == sid:
                return SceneSample.from_records(records.load(Path(root) / e["file"]))
    raise KeyError(f"sample {sid!r} not in dataset")


def export_voxels(path, grid: np.ndarray):
    """Write the nonzero voxels of an integer grid (T, X, Y, Z)."""
    grid = np.asarray(grid)
    t, *ext = grid.shape
    idx = np.argwhere(grid != 0)
    with open(path, "w") as fh:
        fh.write(f"{HEADER}\n# frames {t} extents {' '.join(map(str, ext))}\n# frame x y z class\n")
        for row in idx:
            fh.write(f"{' '.join(map(str, row))} {int(grid[tuple(row)])}\n")


def export_flow(path, flow: np.ndarray, mask: np.ndarray):
    """Write flow vectors (T, 3, X, Y, Z) at the voxels where ``mask`` (T, X, Y, Z) is set."""
    t, _, *ext = flow.shape
    idx = np.argwhere(mask)
    with open(path, "w") as fh:
        fh.write(f"{HEADER}\n# frames {t} extents {' '.join(map(str, ext))}\n# frame x y z dx dy dz\n")
        for row in idx:
            f, x, y, z = row
            v = flow[f, :, x, y, z]
            fh.write(f"{f} {x} {y} {z} {' '.join(repr(float(c)) for c in v)}\n")


def _read(path):
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != HEADER:
        raise ValueError(f"{path}: not a voxel-list file")
    parts = lines[1].split()
    t, ext = int(parts[2]), tuple(int(p) for p in parts[4:7])
    rows = [ln.split() for ln in lines[3:] if ln.strip()]
    return t, ext, rows


def import_voxels(path, dtype=np.uint8) -> np.ndarray:
    t, ext, rows = _read(path)
    grid = np.zeros((t,) + ext, dtype=dtype)
    for r in rows:
        grid[int(r[0]), int(r[1]), int(r[2]), int(r[3])] = int(r[4])
    return grid


def import_flow(path, dtype=np.float32) -> np.ndarray:
    t, ext, rows = _read(path)
    flow = np.zeros((t, 3) + ext, dtype=dtype)
    for r in rows:
        f, x, y, z = (int(v) for v in r[:4])
        flow[f, :, x, y, z] = [float(v) for v in r[4:7]]
    return flow


def count_voxels(path) -> int:
    return len(_read(path)[2])
