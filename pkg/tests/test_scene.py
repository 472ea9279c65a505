import numpy as np
import pytest

from occforecast.geometry import GridSpec
from occforecast.scene import (ObjectSpec, SceneSample, WorldConfig, aligned_observation, ego_poses, encode_observation,
                               generate_dataset, generate_scene, inflate_labels)


def _still(objects, **kw):
    return WorldConfig(objects=tuple(objects), ego_speed=0.0, ego_yaw_rate=0.0, noise=0.0, **kw)


def test_static_world_frames_identical():
    cfg = _still([ObjectSpec((4.0, 5.0, 0.0), (8, 2, 4), movable=False),
                  ObjectSpec((15.0, 15.0, 1.0), (4, 3, 2), movable=True)])
    s = generate_scene(cfg, 0)
    for arr in (s.obs_features, s.gmo_fine, s.gso_fine, s.gmo_inflated):
        assert all(np.array_equal(arr[0], a) for a in arr)
    assert s.gmo_fine.sum() > 0 and s.gso_fine.sum() > 0
    assert not s.flow.any()


def test_box_moving_one_voxel_per_frame():
    cfg = _still([ObjectSpec((10.0, 12.0, 1.0), (3, 3, 2), velocity=(1.0, 0.0, 0.0))])
    s = generate_scene(cfg, 0)
    for t in range(1, s.gmo_fine.shape[0]):
        assert np.array_equal(s.gmo_fine[t, 1:], s.gmo_fine[t - 1, :-1])
        assert np.argwhere(s.gmo_fine[t])[:, 0].min() == 10 + t
    obs = s.obs_features[:, 0]
    assert np.array_equal(obs[-1], s.gmo_fine[0])
    assert np.array_equal(obs[1, 1:], obs[0, :-1])


def test_flow_is_forward_displacement_in_metres():
    cfg = _still([ObjectSpec((10.0, 12.0, 1.0), (3, 3, 2), velocity=(1.0, 0.0, 0.0))])
    s = generate_scene(cfg, 0)
    mask = s.gmo_fine > 0
    vec = np.moveaxis(s.flow, 1, -1)[mask]
    assert np.allclose(vec, (0.2, 0.0, 0.0))
    assert not np.moveaxis(s.flow, 1, -1)[~mask].any()


def test_determinism_and_seed_sensitivity():
    cfg = WorldConfig()
    a, b, c = generate_scene(cfg, 7), generate_scene(cfg, 7), generate_scene(cfg, 8)
    ra, rb = a.to_records(), b.to_records()
    assert all(np.array_equal(ra[k], rb[k]) for k in ra)
    assert not np.array_equal(a.gmo_fine, c.gmo_fine) or not np.array_equal(a.obs_features, c.obs_features)


def test_noise_channel_std():
    cfg = WorldConfig(noise=0.1, in_channels=3)
    noise = np.concatenate([s.obs_features[:, 1:3].ravel() for s in generate_dataset(cfg, 4, 0)])
    assert abs(noise.std() - 0.1) < 0.01
    assert abs(noise.mean()) < 0.01


def test_inflate_unit_cube():
    fine = np.zeros((8, 8, 8), np.uint8)
    fine[1, 1, 1] = fine[2, 3, 1] = 1
    out = inflate_labels(fine, [(np.array([1, 1, 0]), np.array([4, 4, 3]))])
    assert out.sum() == 27 and np.all(out >= fine)
    clipped = inflate_labels(fine, [(np.array([-2, 6, 0]), np.array([2, 10, 2]))])
    assert clipped.sum() == 2 * 2 * 2


@pytest.mark.parametrize("seed", range(5))
def test_inflated_covers_fine(seed):
    s = generate_scene(WorldConfig(), seed)
    assert np.all(s.gmo_inflated >= s.gmo_fine)
    assert s.gmo_fine.shape == (5, 32, 32, 8) and s.flow.shape == (5, 3, 32, 32, 8)
    assert s.obs_features.shape == (3, 3, 32, 32, 8) and s.obs_features.dtype == np.float32


def test_cabin_shape_inflates_beyond_fine():
    cfg = _still([ObjectSpec((10.0, 10.0, 1.0), (4, 3, 4), cabin=True)])
    s = generate_scene(cfg, 0)
    assert s.gmo_inflated[0].sum() == 4 * 3 * 4
    assert s.gmo_fine[0].sum() == 4 * 3 * 2 + 2 * 3 * 2


def test_ego_poses_current_is_identity():
    cfg = WorldConfig(obs_frames=4)
    poses = ego_poses(cfg)
    assert len(poses) == 4 and np.allclose(poses[-1].matrix(), np.eye(4))
    assert np.linalg.norm(poses[-2].translation) == pytest.approx(cfg.ego_speed)


def test_alignment_undoes_ego_motion():
    cfg = WorldConfig(objects=(ObjectSpec((8.0, 8.0, 0.0), (10, 2, 4), movable=False),),
                      ego_speed=0.4, ego_yaw_rate=0.0, noise=0.0)
    s = generate_scene(cfg, 0)
    al = aligned_observation(s, cfg.spec)[:, 0]
    assert not np.array_equal(s.obs_features[0, 0], s.obs_features[-1, 0])
    assert np.array_equal(al[0], al[-1])


def test_records_roundtrip():
    s = generate_scene(WorldConfig(), 3)
    r = SceneSample.from_records(s.to_records())
    assert r.seed == s.seed
    assert all(np.allclose(p.matrix(), q.matrix()) for p, q in zip(r.poses, s.poses))
    assert np.array_equal(r.flow, s.flow)


def test_embed_channels_appended():
    cfg = WorldConfig(in_channels=1, semantic=False)
    s = generate_scene(cfg, 0, embed=lambda occ: occ[:, None] * 2.0)
    assert s.obs_features.shape[1] == 2
    assert np.array_equal(s.obs_features[:, 1], 2 * s.obs_features[:, 0])


def test_plain_occupancy_features():
    cfg = WorldConfig(in_channels=1, noise=0.0, semantic=False)
    s = generate_scene(cfg, 4)
    assert s.obs_features.shape[1] == 1
    assert set(np.unique(s.obs_features)) <= {0.0, 1.0}


def test_semantic_channel_marks_movable_objects():
    cfg = _still([ObjectSpec((4.0, 5.0, 0.0), (8, 2, 4), movable=False),
                  ObjectSpec((15.0, 15.0, 1.0), (4, 3, 2), movable=True)])
    s = generate_scene(cfg, 0)
    assert cfg.feature_channels == 3 and s.obs_features.shape[1] == 3
    assert np.array_equal(s.obs_features[-1, 2], s.gmo_fine[0])
    assert np.all(s.obs_features[:, 2] <= s.obs_features[:, 0])
    with pytest.raises(ValueError):
        encode_observation(np.zeros((2, 4, 4, 4)), cfg, np.random.default_rng(0))


def test_empty_world_observation_is_zero():
    cfg = _still([ObjectSpec((60.0, 60.0, 0.0), (2, 2, 2), movable=False)])
    s = generate_scene(cfg, 0)
    assert not s.obs_features[:, 0].any() and not s.obs_features[:, 2].any()


def test_translation_conserves_count():
    cfg = _still([ObjectSpec((4.0, 6.0, 1.0), (3, 2, 2), velocity=(0.0, 1.5, 0.0))])
    s = generate_scene(cfg, 0)
    counts = s.gmo_fine.reshape(s.gmo_fine.shape[0], -1).sum(axis=1)
    assert np.all(counts == counts[0])


def test_world_config_validation():
    with pytest.raises(ValueError):
        WorldConfig(obs_frames=0)
    with pytest.raises(ValueError):
        WorldConfig(gmo_size_xy=(3, 40))
    cfg = WorldConfig(objects=(ObjectSpec((1.0, 2.0, 0.0), (2, 2, 2)),), spec=GridSpec.toy())
    assert WorldConfig.from_dict(cfg.to_dict()) == cfg
