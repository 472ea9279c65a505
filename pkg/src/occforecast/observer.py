"""Observer: channel reduction followed by Efficient 4D Aggregation (E4A).

E4A is a U-shaped block over (T, C, X, Y, Z) features: stride-2 3D convs
downsample, Tripling-Attention Fusion (TAF) mixes space and time at every
downsampled level, nearest-neighbour upsampling + conv climbs back up with a
skip sum at each resolution, and a zero-initialized terminal 1x1x1 conv closes
the global residual ``Q' = Q + F(Q)``.

TAF splits a level feature into a scene vector (GAP over X,Y,Z), a height
profile (GAP over X,Y) and a BEV plane (GAP over Z); each branch gets its own
temporal attention before the three are broadcast-summed back to full shape.
"""

from __future__ import annotations

from dataclasses import dataclass

from .tensor import ConfigError, Conv, Linear, NormAct, ParamStore, ShapeError, Tensor, WindowAttention, ops
from .tensor.profile import scope


@dataclass(frozen=True)
class E4AConfig:
    channels: int = 8
    levels: int = 2
    window: int = 4
    heads: int = 2
    max_len: int = 7
    variant: str = "e4a"  # e4a | bev | tpv | dense
    act: str = "relu"
    height_kernel: int = 3
    plane_width: int = 16  # hidden width of the BEV/TPV 2-D aggregators

    def check(self, spatial):
        div = 2 ** self.levels
        if self.variant == "e4a":
            if any(e % div for e in spatial):
                raise ConfigError(f"extents {tuple(spatial)} not divisible by 2^{self.levels}")
            levels = range(1, self.levels + 1) if self.levels else [0]
            for i in levels:
                px, py = spatial[0] >> i, spatial[1] >> i
                if px % self.window or py % self.window:
                    raise ConfigError(f"window {self.window} does not divide level-{i} plane {px}x{py}")
        elif self.variant == "dense":
            if spatial[0] % self.window or spatial[1] % self.window:
                raise ConfigError(f"window {self.window} does not divide plane {spatial[:2]}")
        elif self.variant in ("bev", "tpv"):
            if any(e % div for e in spatial):
                raise ConfigError(f"extents {tuple(spatial)} not divisible by 2^{self.levels}")
        else:
            raise ConfigError(f"unknown observer variant {self.variant!r}")
        if self.channels % self.heads:
            raise ConfigError(f"channels {self.channels} not divisible by heads {self.heads}")


class TemporalAttention:
    """Single-head self-attention across frames at each position.

    Input (T, C, *spatial). Learned additive frame embeddings enter the query
    and key paths only, so a single frame reduces to ``proj(v(x))``.
    """

    def __init__(self, store: ParamStore, name: str, channels: int, max_len: int):
        self.max_len = max_len
        self.embed = store.add(f"{name}.embed", (max_len, channels), "normal", scale=0.02)
        self.q = Linear(store, f"{name}.q", channels, channels)
        self.k = Linear(store, f"{name}.k", channels, channels)
        self.v = Linear(store, f"{name}.v", channels, channels)
        self.proj = Linear(store, f"{name}.proj", channels, channels)

    def __call__(self, x: Tensor) -> Tensor:
        t, c = x.shape[:2]
        if t > self.max_len:
            raise ConfigError(f"sequence length {t} exceeds temporal embedding table {self.max_len}")
        spatial = x.shape[2:]
        nsp = len(spatial)
        tok = x.transpose((*range(2, 2 + nsp), 0, 1)).reshape(-1, t, c)  # (P, T, C)
        qk_in = tok + self.embed[:t]
        out = ops.sdpa(self.q(qk_in), self.k(qk_in), self.v(tok))
        out = self.proj(out)
        return out.reshape(*spatial, t, c).transpose((nsp, nsp + 1, *range(nsp)))


@dataclass
class Tripled:
    scene: Tensor  # (T, C, 1, 1, 1)
    height: Tensor  # (T, C, 1, 1, Z)
    bev: Tensor  # (T, C, X, Y, 1)


class Tripling:
    def __init__(self, store: ParamStore, name: str, cfg: E4AConfig):
        c = cfg.channels
        self.cfg = cfg
        self.scene_fc = Linear(store, f"{name}.scene.linear", c, c)
        self.scene_norm = NormAct(store, f"{name}.scene.norm", c, cfg.act, axis=-1)
        self.height_conv = Conv(store, f"{name}.height.conv", c, c, kernel=cfg.height_kernel, dims=1)
        self.height_norm = NormAct(store, f"{name}.height.norm", c, cfg.act, axis=1)
        self.bev_attn = WindowAttention(store, f"{name}.bev.wmsa", c, cfg.window, cfg.heads)

    def __call__(self, u: Tensor) -> Tripled:
        t, c, x, y, z = u.shape
        s = ops.gap(u, (2, 3, 4)).reshape(t, c)
        s = self.scene_norm(self.scene_fc(s)).reshape(t, c, 1, 1, 1)
        h = ops.gap(u, (2, 3)).reshape(t, c, z)
        h = self.height_norm(self.height_conv(h)).reshape(t, c, 1, 1, z)
        b = ops.gap(u, (4,)).reshape(t, c, x, y)
        b = self.bev_attn(b).reshape(t, c, x, y, 1)
        return Tripled(s, h, b)


class TAF:
    """Tripling followed by per-branch temporal attention and a broadcast sum."""

    def __init__(self, store: ParamStore, name: str, cfg: E4AConfig):
        self.tripling = Tripling(store, name, cfg)
        c = cfg.channels
        self.ta_scene = TemporalAttention(store, f"{name}.ta_scene", c, cfg.max_len)
        self.ta_height = TemporalAttention(store, f"{name}.ta_height", c, cfg.max_len)
        self.ta_bev = TemporalAttention(store, f"{name}.ta_bev", c, cfg.max_len)

    def fuse(self, tr: Tripled) -> Tensor:
        s, h, b = self.ta_scene(tr.scene), self.ta_height(tr.height), self.ta_bev(tr.bev)
        if s.shape[:2] != h.shape[:2] or s.shape[:2] != b.shape[:2]:
            raise ShapeError(f"branch shapes disagree: {s.shape}, {h.shape}, {b.shape}")
        return taf_fuse(s, h, b)

    def __call__(self, u: Tensor) -> Tensor:
        return self.fuse(self.tripling(u))


def taf_fuse(scene: Tensor, height: Tensor, bev: Tensor) -> Tensor:
    """Broadcast sum of (T,C,1,1,1) + (T,C,1,1,Z) + (T,C,X,Y,1) -> (T,C,X,Y,Z)."""
    return (scene + height) + bev


class E4A:
    def __init__(self, store: ParamStore, name: str, cfg: E4AConfig, stride: int = 2):
        c = cfg.channels
        self.cfg = cfg
        self.stride = stride
        self.down, self.taf, self.up = [], [], []
        for i in range(1, cfg.levels + 1):
            self.down.append(Conv(store, f"{name}.down{i}", c, c, kernel=3, stride=stride, pad=1))
            self.taf.append(TAF(store, f"{name}.taf{i}", cfg))
            self.up.append(Conv(store, f"{name}.up{i}", c, c, kernel=3))
        self.taf0 = TAF(store, f"{name}.taf0", cfg) if cfg.levels == 0 else None
        self.out = Conv(store, f"{name}.out", c, c, kernel=1, init="zeros")

    def __call__(self, q: Tensor) -> Tensor:
        feats = [q]
        h = q
        for i in range(self.cfg.levels):
            with scope(f"level{i + 1}"):
                h = self.down[i](h)
                h = h + self.taf[i](h)
            feats.append(h)
        if self.taf0 is not None:
            with scope("level0"):
                h = h + self.taf0(h)
        for i in reversed(range(self.cfg.levels)):
            with scope(f"up{i + 1}"):
                if self.stride > 1:
                    h = ops.upsample_nearest(h, self.stride, 3)
                h = self.up[i](h) + feats[i]
        with scope("out"):
            return q + self.out(h)


class PlaneAggregator:
    """2-D U-shaped aggregator for one folded plane (BEV/TPV observer variants).

    The axis named by ``fold`` is moved into channels, processed on the
    remaining plane with 3x3 convs (one stride-2 level per E4A level), then
    unfolded. The terminal projection is zero-initialized.
    """

    def __init__(self, store: ParamStore, name: str, cfg: E4AConfig, depth: int, fold: int):
        c, w = cfg.channels, cfg.plane_width
        self.fold, self.levels = fold, cfg.levels
        self.inp = Conv(store, f"{name}.in", c * depth, w, kernel=1, dims=2)
        self.down = [Conv(store, f"{name}.down{i}", w, w, kernel=3, dims=2, stride=2, pad=1) for i in range(1, cfg.levels + 1)]
        self.up = [Conv(store, f"{name}.up{i}", w, w, kernel=3, dims=2) for i in range(1, cfg.levels + 1)]
        self.out = Conv(store, f"{name}.out", w, c * depth, kernel=1, dims=2, init="zeros")

    def __call__(self, q: Tensor) -> Tensor:
        t, c = q.shape[:2]
        keep = [a for a in (2, 3, 4) if a != self.fold]
        perm = (0, 1, self.fold, *keep)
        depth = q.shape[self.fold]
        p1, p2 = q.shape[keep[0]], q.shape[keep[1]]
        plane = q.transpose(perm).reshape(t, c * depth, p1, p2)
        h = self.inp(plane)
        feats = [h]
        for i in range(self.levels):
            h = ops.relu(self.down[i](h))
            feats.append(h)
        for i in reversed(range(self.levels)):
            h = self.up[i](ops.upsample_nearest(h, 2, 2)) + feats[i]
        out = self.out(h).reshape(t, c, depth, p1, p2)
        inv = [0] * 5
        for dst, src in enumerate(perm):
            inv[src] = dst
        return out.transpose(inv)


class BEVAggregator:
    def __init__(self, store: ParamStore, name: str, cfg: E4AConfig, spatial):
        self.plane = PlaneAggregator(store, f"{name}.xy", cfg, spatial[2], fold=4)

    def __call__(self, q: Tensor) -> Tensor:
        return q + self.plane(q)


class TPVAggregator:
    def __init__(self, store: ParamStore, name: str, cfg: E4AConfig, spatial):
        self.planes = [
            PlaneAggregator(store, f"{name}.xy", cfg, spatial[2], fold=4),
            PlaneAggregator(store, f"{name}.xz", cfg, spatial[1], fold=3),
            PlaneAggregator(store, f"{name}.yz", cfg, spatial[0], fold=2),
        ]

    def __call__(self, q: Tensor) -> Tensor:
        out = q
        for p in self.planes:
            out = out + p(q)
        return out


def build_aggregator(store: ParamStore, name: str, cfg: E4AConfig, spatial):
    cfg.check(spatial)
    if cfg.variant == "e4a":
        return E4A(store, name, cfg)
    if cfg.variant == "dense":
        return E4A(store, name, cfg, stride=1)
    if cfg.variant == "bev":
        return BEVAggregator(store, name, cfg, spatial)
    if cfg.variant == "tpv":
        return TPVAggregator(store, name, cfg, spatial)
    raise ConfigError(f"unknown observer variant {cfg.variant!r}")


class Observer:
    """``reduce_channels`` (1x1x1 conv, C+6 -> C) followed by the aggregator.

    With ``aggregate=False`` the aggregator is skipped (the w/o-Observer ablation).
    """

    def __init__(self, store: ParamStore, name: str, in_channels: int, cfg: E4AConfig, spatial,
                 aggregate: bool = True):
        self.in_channels = in_channels
        self.reduce = Conv(store, f"{name}.reduce", in_channels, cfg.channels, kernel=1)
        self.agg = build_aggregator(store, f"{name}.e4a", cfg, spatial) if aggregate else None

    def reduce_channels(self, f_motion: Tensor) -> Tensor:
        if f_motion.shape[1] != self.in_channels:
            raise ShapeError(f"observer expects {self.in_channels} channels, got {f_motion.shape[1]}")
        return self.reduce(f_motion)

    def __call__(self, f_motion: Tensor) -> Tensor:
        with scope("reduce"):
            o = self.reduce_channels(f_motion)
        if self.agg is None:
            return o
        with scope("aggregate"):
            return self.agg(o)


def build_variant(style: str, store: ParamStore, name: str, in_channels: int, cfg: E4AConfig, spatial) -> Observer:
    from dataclasses import replace
    return Observer(store, name, in_channels, replace(cfg, variant=style.lower()), spatial)
