"""Ego poses, voxel grid geometry, frame alignment and pose channels.

Rotation convention: intrinsic yaw-pitch-roll, i.e. ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
A pose maps local coordinates into its parent frame: ``p_parent = R p_local + t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .tensor import ShapeError


@dataclass(frozen=True)
class Pose6DoF:
    translation: tuple = (0.0, 0.0, 0.0)
    rotation: tuple = (0.0, 0.0, 0.0)  # roll, pitch, yaw (radians)

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.rotation):
            raise ValueError(f"non-finite rotation {self.rotation}")
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))
        object.__setattr__(self, "rotation", tuple(float(v) for v in self.rotation))

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose6DoF":
        yaw, pitch, roll = Rotation.from_matrix(m[:3, :3]).as_euler("ZYX")
        return cls(tuple(m[:3, 3]), (roll, pitch, yaw))

    def rotation_matrix(self) -> np.ndarray:
        roll, pitch, yaw = self.rotation
        return Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix()
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation_matrix().T + np.asarray(self.translation)

    def inverse(self) -> "Pose6DoF":
        return Pose6DoF.from_matrix(np.linalg.inv(self.matrix()))

    def compose(self, other: "Pose6DoF") -> "Pose6DoF":
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return Pose6DoF.from_matrix(self.matrix() @ other.matrix())

    def as_vector(self) -> np.ndarray:
        return np.array(self.translation + self.rotation)


def relative_pose(src: Pose6DoF, dst: Pose6DoF) -> Pose6DoF:
    """Transform taking ``src``-frame coordinates to ``dst``-frame coordinates.

    Both poses are expressed in a common world frame.
    """
    return Pose6DoF.from_matrix(np.linalg.inv(dst.matrix()) @ src.matrix())


@dataclass(frozen=True)
class GridSpec:
    x_range: tuple = (-51.2, 51.2)
    y_range: tuple = (-51.2, 51.2)
    z_range: tuple = (-5.0, 3.0)
    resolution: float = 0.2
    extents: tuple = field(default=None)

    def __post_init__(self):
        ext = []
        for lo, hi in (self.x_range, self.y_range, self.z_range):
            n = (hi - lo) / self.resolution
            if abs(n - round(n)) > 1e-6 or round(n) < 1:
                raise ValueError(f"range {lo}..{hi} is not a whole number of {self.resolution} m voxels")
            ext.append(int(round(n)))
        if self.extents is not None and tuple(self.extents) != tuple(ext):
            raise ValueError(f"extents {self.extents} inconsistent with ranges (expected {tuple(ext)})")
        object.__setattr__(self, "extents", tuple(ext))

    @classmethod
    def toy(cls):
        return cls((-3.2, 3.2), (-3.2, 3.2), (-1.0, 0.6), 0.2)

    @property
    def origin(self) -> np.ndarray:
        return np.array([self.x_range[0], self.y_range[0], self.z_range[0]])

    def centers(self) -> np.ndarray:
        """Voxel centre coordinates, shape (X, Y, Z, 3)."""
        axes = [self.origin[i] + (np.arange(n) + 0.5) * self.resolution for i, n in enumerate(self.extents)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def to_index(self, points) -> np.ndarray:
        return np.floor((np.asarray(points) - self.origin) / self.resolution).astype(np.int64)

    def to_dict(self):
        return {"x_range": list(self.x_range), "y_range": list(self.y_range), "z_range": list(self.z_range),
                "resolution": self.resolution}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["x_range"]), tuple(d["y_range"]), tuple(d["z_range"]), float(d["resolution"]))


def align_to_current(grid: np.ndarray, rel: Pose6DoF, spec: GridSpec) -> np.ndarray:
    """Resample a frame into the current frame by nearest-neighbour lookup.

    ``rel`` maps source-frame coordinates to current-frame coordinates. ``grid``
    is (..., X, Y, Z); voxels whose pre-image falls outside the grid become 0.
    """
    if tuple(grid.shape[-3:]) != spec.extents:
        raise ShapeError(f"grid extents {grid.shape[-3:]} != spec {spec.extents}")
    if rel == Pose6DoF():
        return grid.copy()
    src = rel.inverse().apply(spec.centers().reshape(-1, 3))
    idx = spec.to_index(src)
    ext = np.array(spec.extents)
    ok = np.all((idx >= 0) & (idx < ext), axis=1)
    flat = np.zeros(grid.shape[:-3] + (idx.shape[0],), dtype=grid.dtype)
    i = idx[ok]
    flat[..., ok] = grid[..., i[:, 0], i[:, 1], i[:, 2]]
    return flat.reshape(grid.shape)


def concat_pose_channels(f: np.ndarray, poses) -> np.ndarray:
    """Append each frame's 6 relative-pose values as constant channels.

    ``f`` is (T, C, X, Y, Z); the result is (T, C+6, X, Y, Z) with channel order
    (tx, ty, tz, roll, pitch, yaw).
    """
    if len(poses) != f.shape[0]:
        raise ShapeError(f"{len(poses)} poses for {f.shape[0]} frames")
    t, c = f.shape[:2]
    out = np.empty((t, c + 6) + f.shape[2:], dtype=f.dtype)
    out[:, :c] = f
    for i, p in enumerate(poses):
        out[i, c:] = p.as_vector().astype(f.dtype)[:, None, None, None]
    return out
