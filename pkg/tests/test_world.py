import json

import numpy as np
import pytest

from episteme.world import GridWorld, Poi, RobotPose, WorldConfig, reset_world
from oracles import manhattan


def _world(pois, robots, sigma=0.0):
    cfg = WorldConfig(width=10, height=10, n_pois=len(pois), n_robots=len(robots),
                      robot_modalities=tuple(m for _, m in robots), sigma_obs=sigma)
    return GridWorld(cfg, [Poi(c, k) for c, k in pois], [RobotPose(c, m) for c, m in robots])


def test_reset_is_deterministic():
    a = reset_world(WorldConfig(seed=3))
    b = reset_world(WorldConfig(seed=3))
    assert a.snapshot() == b.snapshot()


def test_default_counts_and_distinct_cells():
    w = reset_world(WorldConfig(seed=1))
    cells = w.poi_cells() + [r.cell for r in w.robots]
    assert w.n_pois == 4 and w.n_robots == 3
    assert len(set(cells)) == 7
    assert all(0 <= x < 10 and 0 <= y < 10 for x, y in cells)


def test_class_frequencies_uniform():
    w = reset_world(WorldConfig(width=100, height=100, n_pois=3000, n_robots=1, robot_modalities=(0,), seed=5))
    freq = np.bincount(w.class_labels(), minlength=3) / 3000
    # binomial sd ~0.0086 around 1/3
    assert np.all((freq >= 0.30) & (freq <= 0.37)), freq


@pytest.mark.parametrize("cfg", [
    WorldConfig(width=2, height=2, n_pois=3, n_robots=2, robot_modalities=(0, 1)),
    WorldConfig(n_robots=2, robot_modalities=(0, 1, 0)),
    WorldConfig(robot_modalities=(0, 2, 0)),
    WorldConfig(n_pois=0),
    WorldConfig(class_count=4),
])
def test_infeasible_configs_rejected(cfg):
    with pytest.raises(ValueError):
        reset_world(cfg)


def test_noise_free_observations_follow_table():
    w = _world([((1, 1), 2), ((2, 2), 0), ((3, 3), 1)], [((0, 0), 0)])
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(w.sample_observation(0, 0, rng).vector, [1.0, 0.0])
    a0 = w.sample_observation(1, 0, rng).vector
    a1 = w.sample_observation(2, 0, rng).vector
    np.testing.assert_array_equal(a0, a1)
    np.testing.assert_array_equal(a0, [-1.0, 0.0])
    np.testing.assert_array_equal(w.sample_observation(1, 1, rng).vector, [-1.0, 0.0])
    np.testing.assert_array_equal(w.sample_observation(2, 1, rng).vector, [1.0, 0.0])


def test_noisy_sample_mean():
    w = _world([((1, 1), 2)], [((0, 0), 0)], sigma=0.2)
    rng = np.random.default_rng(11)
    draws = np.array([w.sample_observation(0, 1, rng).vector for _ in range(10000)])
    # CLT: sd of the mean is 0.002
    assert np.all(np.abs(draws.mean(axis=0) - [1.0, 0.0]) < 0.01)


def test_drive_distance_and_pose():
    w = _world([((3, 4), 0)], [((0, 0), 0), ((3, 4), 1)])
    rng = np.random.default_rng(0)
    before = w.path_distance(0, 0)
    obs, d = w.execute_drive(0, 0, rng)
    assert d == 7 == before
    assert w.robots[0].cell == (3, 4)
    assert obs.modality == 0 and obs.poi_index == 0
    obs, d = w.execute_drive(1, 0, rng)
    assert d == 0 and w.robots[1].cell == (3, 4)
    # co-location is allowed
    assert w.robots[0].cell == w.robots[1].cell


def test_path_distance_examples_and_symmetry():
    w = _world([((4, 1), 0), ((1, 1), 0)], [((1, 1), 0)])
    assert w.path_distance(0, 1) == 0
    assert w.path_distance(0, 0) == 3
    rng = np.random.default_rng(0)
    for _ in range(100):
        p, q = tuple(rng.integers(0, 10, 2)), tuple(rng.integers(0, 10, 2))
        wp = _world([(q, 0)], [(p, 0)])
        wq = _world([(p, 0)], [(q, 0)])
        assert wp.path_distance(0, 0) == wq.path_distance(0, 0) == manhattan(p, q)


def test_candidates_sorted_with_index_tiebreak():
    # distances from (0, 0): 5, 2, 2, 9
    w = _world([((5, 0), 0), ((2, 0), 0), ((0, 2), 0), ((9, 0), 0)], [((0, 0), 0)])
    masks = np.zeros((4, 2), dtype=bool)
    assert w.candidate_pois(0, masks, 2) == [1, 2]
    assert w.candidate_pois(0, masks, 10) == [1, 2, 0, 3]


def test_candidates_filter_by_own_modality():
    w = _world([((5, 0), 0), ((2, 0), 0)], [((0, 0), 0)])
    masks = np.array([[False, True], [True, False]])
    assert w.candidate_pois(0, masks, 2) == [0]
    masks[:, 0] = True
    assert w.candidate_pois(0, masks, 2) == []


def test_candidates_random_sort_oracle():
    rng = np.random.default_rng(3)
    for seed in range(50):
        w = reset_world(WorldConfig(n_pois=8, seed=seed))
        masks = rng.random((8, 2)) < 0.3
        got = w.candidate_pois(1, masks, 3)
        m = w.robots[1].modality
        ref = sorted((manhattan(w.robots[1].cell, w.poi_cell(n)), n) for n in range(8) if not masks[n, m])
        assert got == [n for _, n in ref[:3]]
        assert len(set(got)) == len(got)


def test_snapshot_is_json():
    snap = reset_world(WorldConfig(seed=2)).snapshot()
    doc = json.loads(json.dumps(snap))
    assert set(doc) == {"config", "pois", "robots"}
    assert set(doc["pois"][0]) == {"cell", "class"}
