"""Deterministic synthetic 4D driving worlds.

A world is a set of movable boxes (GMO, with a body and a smaller cabin on
top) and static walls/slabs (GSO) laid out in the current ego frame, in voxel
units. Observation frames are rendered in each past ego frame and then encoded
into features; labels for the current and future frames are rendered directly
in current-frame coordinates. Flow is the forward displacement t -> t+1 in
metres of the voxel-snapped object position.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .geometry import GridSpec, Pose6DoF, align_to_current


@dataclass(frozen=True)
class ObjectSpec:
    """Scripted object: integer size, float corner position and velocity in voxels."""

    position: tuple
    size: tuple
    velocity: tuple = (0.0, 0.0, 0.0)
    movable: bool = True
    cabin: bool = False


@dataclass(frozen=True)
class WorldConfig:
    spec: GridSpec = field(default_factory=GridSpec.toy)
    obs_frames: int = 3
    future_frames: int = 4
    n_gmo: tuple = (2, 4)
    gmo_size_xy: tuple = (3, 6)
    gmo_size_z: tuple = (2, 4)
    speed: tuple = (0.1, 0.2)  # metres per frame
    lane_aligned: bool = True
    n_gso: tuple = (1, 2)
    ego_speed: float = 0.2  # metres per frame
    ego_yaw_rate: float = 0.02  # radians per frame
    in_channels: int = 2  # occupancy + noise channels
    noise: float = 0.1
    semantic: bool = True  # append a movable-object indicator channel
    jitter: float = 0.0  # voxels, per-frame position noise of movable objects
    inflate_margin: int = 0
    world_margin: int = 8  # voxels of unobserved world beyond each x/y edge
    objects: tuple = ()  # scripted objects replace random ones when given

    def __post_init__(self):
        if self.obs_frames < 1 or self.future_frames < 1:
            raise ValueError("obs_frames and future_frames must be >= 1")
        if self.in_channels < 1:
            raise ValueError("in_channels must be >= 1")
        ext = self.spec.extents
        if self.gmo_size_xy[1] > min(ext[0], ext[1]) or self.gmo_size_z[1] > ext[2]:
            raise ValueError("box extents do not fit the grid")

    @property
    def feature_channels(self) -> int:
        """Observation channels per frame as seen by the model (before pose channels)."""
        return self.in_channels + int(self.semantic)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["spec"] = self.spec.to_dict()
        d["objects"] = [dataclasses.asdict(o) for o in self.objects]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "spec" in d:
            d["spec"] = GridSpec.from_dict(d["spec"])
        d["objects"] = tuple(ObjectSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in o.items()})
                             for o in d.get("objects", ()))
        for k, v in list(d.items()):
            if isinstance(v, list):
                d[k] = tuple(v)
        return cls(**d)


@dataclass
class Track:
    """Voxel parts (offset, size) of one object and its integer corner per frame."""

    parts: list
    corners: dict
    movable: bool

    def boxes(self, frame):
        c = self.corners[frame]
        return [(c + off, c + off + sz) for off, sz in self.parts]

    def bbox(self, frame, margin=0):
        boxes = self.boxes(frame)
        lo = np.min([b[0] for b in boxes], axis=0) - margin
        hi = np.max([b[1] for b in boxes], axis=0) + margin
        return lo, hi


@dataclass
class SceneSample:
    """One sequence. Label arrays hold the current frame at index 0 followed by
    the T' future frames; ``obs_features`` frames are each in their own ego frame."""

    obs_features: np.ndarray  # (T, C_in, X, Y, Z) float32
    poses: list  # T poses, frame t -> current
    gmo_fine: np.ndarray  # (1+T', X, Y, Z) uint8
    gmo_inflated: np.ndarray
    gso_fine: np.ndarray
    flow: np.ndarray  # (1+T', 3, X, Y, Z) float32, metres
    seed: int = 0

    @property
    def current_gmo_fine(self):
        return self.gmo_fine[0]

    @property
    def future_gmo_fine(self):
        return self.gmo_fine[1:]

    @property
    def future_gmo_inflated(self):
        return self.gmo_inflated[1:]

    @property
    def future_gso_fine(self):
        return self.gso_fine[1:]

    @property
    def future_flow(self):
        return self.flow[1:]

    def to_records(self) -> dict:
        return {
            "obs_features": self.obs_features,
            "poses": np.stack([p.as_vector() for p in self.poses]),
            "gmo_fine": self.gmo_fine,
            "gmo_inflated": self.gmo_inflated,
            "gso_fine": self.gso_fine,
            "flow": self.flow,
            "seed": np.array([self.seed], dtype=np.int64),
        }

    @classmethod
    def from_records(cls, r: dict) -> "SceneSample":
        poses = [Pose6DoF(tuple(v[:3]), tuple(v[3:])) for v in r["poses"]]
        return cls(r["obs_features"], poses, r["gmo_fine"], r["gmo_inflated"], r["gso_fine"], r["flow"],
                   int(r["seed"][0]))


def ego_poses(cfg: WorldConfig) -> list:
    """Poses of past/current ego frames relative to the current frame, oldest first."""
    poses = [Pose6DoF()]
    pos, yaw = np.zeros(3), 0.0
    for _ in range(cfg.obs_frames - 1):
        yaw_prev = yaw - cfg.ego_yaw_rate
        pos = pos - cfg.ego_speed * np.array([np.cos(yaw_prev), np.sin(yaw_prev), 0.0])
        yaw = yaw_prev
        poses.append(Pose6DoF(tuple(pos), (0.0, 0.0, yaw)))
    return poses[::-1]


def _fill(grid, lo, hi, value=1):
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, grid.shape[-3:])
    if np.any(hi <= lo):
        return
    grid[..., lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = value


def inflate_labels(fine: np.ndarray, boxes) -> np.ndarray:
    """Set every voxel inside any integer box ``(lo, hi)`` (hi exclusive).

    Boxes are clipped to the grid. With each fine voxel covered by its
    object's box, the result is a superset of ``fine``.
    """
    out = np.zeros(fine.shape, dtype=np.uint8)
    for lo, hi in boxes:
        _fill(out, np.asarray(lo), np.asarray(hi))
    return out


def render(tracks, frame, shape, offset=(0, 0, 0), movable=None) -> np.ndarray:
    grid = np.zeros(shape, dtype=np.uint8)
    off = np.asarray(offset)
    for tr in tracks:
        if movable is not None and tr.movable != movable:
            continue
        for lo, hi in tr.boxes(frame):
            _fill(grid, lo + off, hi + off)
    return grid


def flow_labels(tracks, spec: GridSpec, frames) -> np.ndarray:
    """Forward displacement (metres) of each movable object on its voxels at each frame."""
    out = np.zeros((len(frames), 3) + spec.extents, dtype=np.float32)
    for i, f in enumerate(frames):
        for tr in tracks:
            if not tr.movable:
                continue
            disp = (tr.corners[f + 1] - tr.corners[f]) * spec.resolution
            mask = np.zeros(spec.extents, dtype=bool)
            for lo, hi in tr.boxes(f):
                _fill(mask, lo, hi, True)
            out[i][:, mask] = disp.astype(np.float32)[:, None]
    return out


def encode_observation(occ_frames: np.ndarray, cfg: WorldConfig, rng: np.random.Generator, embed=None,
                       movable: np.ndarray | None = None) -> np.ndarray:
    """Stand-in for lifted camera features.

    Channel 0 is the occupancy bit; channels 1..in_channels-1 are Gaussian
    noise with std ``cfg.noise``. With ``cfg.semantic`` the movable-object bit
    ``movable`` (T, X, Y, Z) follows, playing the part of the appearance cue a
    camera encoder would supply. ``embed`` optionally maps the occupancy to
    extra (T, k, X, Y, Z) channels appended at the end.
    """
    t = occ_frames.shape[0]
    feats = np.zeros((t, cfg.in_channels) + occ_frames.shape[1:], dtype=np.float32)
    feats[:, 0] = occ_frames
    if cfg.in_channels > 1 and cfg.noise > 0:
        feats[:, 1:] = (cfg.noise * rng.standard_normal(feats[:, 1:].shape)).astype(np.float32)
    if cfg.semantic:
        if movable is None or movable.shape != occ_frames.shape:
            raise ValueError("semantic observation needs a movable mask shaped like the occupancy frames")
        feats = np.concatenate([feats, movable[:, None].astype(np.float32)], axis=1)
    if embed is not None:
        feats = np.concatenate([feats, np.asarray(embed(occ_frames), dtype=np.float32)], axis=1)
    return feats


def _random_objects(cfg: WorldConfig, rng) -> list:
    ext = np.array(cfg.spec.extents)
    m = cfg.world_margin
    objs = []
    for _ in range(rng.integers(cfg.n_gso[0], cfg.n_gso[1] + 1)):
        if rng.random() < 0.5:  # wall
            length = int(rng.integers(ext[0] // 4, ext[0] // 2 + 1))
            thick = int(rng.integers(1, 3))
            height = int(rng.integers(max(1, ext[2] // 2), ext[2] + 1))
            size = (length, thick, height) if rng.random() < 0.5 else (thick, length, height)
        else:  # slab
            size = (int(rng.integers(ext[0] // 4, ext[0] // 2 + 1)), int(rng.integers(ext[1] // 4, ext[1] // 2 + 1)), 1)
        pos = (rng.integers(-m // 2, ext[0] - size[0] + m // 2 + 1), rng.integers(-m // 2, ext[1] - size[1] + m // 2 + 1), 0)
        objs.append(ObjectSpec(tuple(float(p) for p in pos), size, movable=False))
    res = cfg.spec.resolution
    for _ in range(rng.integers(cfg.n_gmo[0], cfg.n_gmo[1] + 1)):
        sx, sy = (int(v) for v in rng.integers(cfg.gmo_size_xy[0], cfg.gmo_size_xy[1] + 1, size=2))
        sz = int(rng.integers(cfg.gmo_size_z[0], cfg.gmo_size_z[1] + 1))
        speed = rng.uniform(*cfg.speed) / res
        if cfg.lane_aligned:
            axis, sign = int(rng.integers(0, 2)), rng.choice([-1.0, 1.0])
            vel = [0.0, 0.0, 0.0]
            vel[axis] = sign * speed
        else:
            ang = rng.uniform(0, 2 * np.pi)
            vel = [speed * np.cos(ang), speed * np.sin(ang), 0.0]
        pos = (rng.uniform(-m / 2, ext[0] - sx + m / 2), rng.uniform(-m / 2, ext[1] - sy + m / 2), 1.0)
        objs.append(ObjectSpec(pos, (sx, sy, sz), tuple(vel), movable=True, cabin=sz >= 2))
    return objs


def _track(obj: ObjectSpec, frames, jitter, rng) -> Track:
    sx, sy, sz = obj.size
    if obj.cabin and sz >= 2:
        body = max(1, sz // 2)
        inset = 1 if sx >= 3 else 0
        parts = [(np.array([0, 0, 0]), np.array([sx, sy, body])),
                 (np.array([inset, 0, body]), np.array([sx - 2 * inset, sy, sz - body]))]
    else:
        parts = [(np.array([0, 0, 0]), np.array([sx, sy, sz]))]
    corners = {}
    for f in frames:
        p = np.asarray(obj.position, dtype=np.float64) + f * np.asarray(obj.velocity, dtype=np.float64)
        if obj.movable and jitter > 0:
            p = p + jitter * rng.standard_normal(3) * np.array([1.0, 1.0, 0.0])
        corners[f] = np.floor(p + 0.5).astype(np.int64)
    return Track(parts, corners, obj.movable)


def generate_scene(cfg: WorldConfig, seed: int, embed=None) -> SceneSample:
    """Build one sample; identical (cfg, seed) gives bit-identical output."""
    rng = np.random.default_rng(seed)
    spec = cfg.spec
    objects = list(cfg.objects) if cfg.objects else _random_objects(cfg, rng)
    t_obs, t_fut = cfg.obs_frames, cfg.future_frames
    frames = list(range(-(t_obs - 1), t_fut + 2))
    tracks = [_track(o, frames, cfg.jitter, rng) for o in objects]

    # observations: render world on a padded grid, sample it from each ego frame
    m = cfg.world_margin
    world_shape = (spec.extents[0] + 2 * m, spec.extents[1] + 2 * m, spec.extents[2])
    poses = ego_poses(cfg)
    centers = spec.centers().reshape(-1, 3)
    occ_obs = np.zeros((t_obs,) + spec.extents, dtype=np.uint8)
    mov_obs = np.zeros_like(occ_obs)
    for i, (f, pose) in enumerate(zip(range(-(t_obs - 1), 1), poses)):
        idx = spec.to_index(pose.apply(centers)) + np.array([m, m, 0])
        ok = np.all((idx >= 0) & (idx < np.array(world_shape)), axis=1)
        for out, movable in ((occ_obs, None), (mov_obs, True)):
            world = render(tracks, f, world_shape, offset=(m, m, 0), movable=movable)
            flat = np.zeros(len(idx), dtype=np.uint8)
            flat[ok] = world[idx[ok, 0], idx[ok, 1], idx[ok, 2]]
            out[i] = flat.reshape(spec.extents)
    feats = encode_observation(occ_obs, cfg, rng, embed, mov_obs)

    label_frames = list(range(0, t_fut + 1))
    gmo = np.stack([render(tracks, f, spec.extents, movable=True) for f in label_frames])
    gso = np.stack([render(tracks, f, spec.extents, movable=False) for f in label_frames])
    inflated = np.stack([
        inflate_labels(gmo[i], [tr.bbox(f, cfg.inflate_margin) for tr in tracks if tr.movable])
        for i, f in enumerate(label_frames)
    ])
    flow = flow_labels(tracks, spec, label_frames)
    return SceneSample(feats, poses, gmo, inflated, gso, flow, int(seed))


def aligned_observation(sample: SceneSample, spec: GridSpec) -> np.ndarray:
    """Observation features resampled into the current frame, (T, C_in, X, Y, Z)."""
    return np.stack([align_to_current(f, p, spec) for f, p in zip(sample.obs_features, sample.poses)])


def generate_dataset(cfg: WorldConfig, n: int, base_seed: int):
    """``n`` samples with per-index seeds split from ``base_seed``."""
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(base_seed).spawn(n)]
    return [generate_scene(cfg, s) for s in seeds]
