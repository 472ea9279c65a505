"""
A synthetic driving world, seen from the ego vehicle
====================================================

Builds one sequence, prints a bird's-eye view of the observed frames and of
the future labels, and shows how ego-motion alignment lines the past frames
up with the present one.
"""

import numpy as np

from occforecast.scene import WorldConfig, aligned_observation, generate_scene

# One sample from the default toy world: 32 x 32 x 8 voxels at 0.2 m,
# 3 observed frames and 4 future frames.
cfg = WorldConfig()
s = generate_scene(cfg, seed=3)
print("observation features", s.obs_features.shape, "(frames, channels, X, Y, Z)")
print("labels", s.gmo_inflated.shape, "(current + future frames, X, Y, Z)")


def bev(grid, movable=None):
    """Column view: '#' static, 'o' movable, '.' free."""
    occ = grid.any(axis=-1)
    mov = movable.any(axis=-1) if movable is not None else np.zeros_like(occ)
    rows = []
    for y in range(occ.shape[1] - 1, -1, -1):
        rows.append("".join("o" if mov[x, y] else "#" if occ[x, y] else "." for x in range(occ.shape[0])))
    return rows


def side_by_side(*panels, titles):
    width = len(panels[0][0])
    print("   ".join(t.ljust(width) for t in titles))
    for lines in zip(*panels):
        print("   ".join(lines))


# Channel 0 of each frame is occupancy in that frame's own ego coordinates;
# the last channel marks voxels that belong to movable objects.
occ = s.obs_features[:, 0] > 0
mov = s.obs_features[:, -1] > 0
side_by_side(*(bev(occ[t], mov[t]) for t in range(3)), titles=["t-2 (raw)", "t-1 (raw)", "t (raw)"])

# After alignment the static walls stay put from frame to frame and only the
# movable objects shift.
al = aligned_observation(s, cfg.spec)
side_by_side(*(bev(al[t, 0] > 0, al[t, -1] > 0) for t in range(3)),
             titles=["t-2 (aligned)", "t-1 (aligned)", "t (aligned)"])

# Forecasting targets: inflated movable-object occupancy at t+1 .. t+4.
side_by_side(*(bev(s.gmo_inflated[j], s.gmo_inflated[j]) for j in range(1, 5)),
             titles=[f"t+{j}" for j in range(1, 5)])

# Flow labels hold each object's forward displacement in metres.
moving = s.future_gmo_fine > 0
vectors = np.moveaxis(s.future_flow, 1, -1)[moving]
print("distinct flow vectors (m/frame):", np.unique(vectors.round(3), axis=0).tolist())
