import dataclasses
import json

import numpy as np
import pytest

from episteme.m2vae import LatentEmbedding, VaeConfig, init_m2vae
from episteme.perceived_env import (
    EnvConfig,
    InvalidActionError,
    PerceivedEnv,
    epistemic_reward,
    team_reward,
    trace_record,
    write_trace,
)
from episteme.world import WorldConfig


@pytest.fixture(scope="module")
def vae():
    return init_m2vae(VaeConfig(seed=1))


def _env(vae, **env_kw):
    return PerceivedEnv(WorldConfig(seed=0), vae, EnvConfig(**env_kw))


def _rollout(env, seed, steps, rng, policy="random"):
    """Random-policy rollout with resets; yields (k, action, result, V before)."""
    env.reset(seed)
    k = 0
    for _ in range(steps):
        ps = env.build_policy_state(k)
        valid = list(np.flatnonzero(ps.mask)) + [ps.nop]
        action = int(valid[rng.integers(len(valid))])
        v_before = env.state.V.copy()
        z_before = list(env.state.Z)
        res = env.step(k, action, rng)
        yield k, action, res, v_before, z_before
        if res.done:
            seed += 1
            env.reset(seed)
            k = 0
        else:
            k = (k + 1) % env.n_robots


def test_epistemic_reward_examples():
    z = LatentEmbedding(np.array([0.1, -0.3]), np.array([0.5, 2.0]))
    assert epistemic_reward(z, z) == 0.0
    old = LatentEmbedding(np.array([0.0]), np.array([1.0]))
    new = LatentEmbedding(np.array([1.0]), np.array([1.0]))
    # 0.5 from trapezoidal integration (see test_diffnet)
    assert epistemic_reward(old, new, 1.0) == pytest.approx(0.5, abs=1e-12)
    assert epistemic_reward(old, new, 3.0) == pytest.approx(1.5, abs=1e-12)


def test_epistemic_reward_direction_flag():
    old = LatentEmbedding(np.array([0.0]), np.array([2.0]))
    new = LatentEmbedding(np.array([0.0]), np.array([1.0]))
    assert epistemic_reward(old, new) == pytest.approx(0.80685, abs=1e-5)
    assert epistemic_reward(old, new, direction="new_old") == pytest.approx(np.log(2) + 1 / 8 - 0.5, abs=1e-12)
    with pytest.raises(ValueError):
        epistemic_reward(old, new, direction="sideways")


def test_epistemic_reward_non_negative(vae):
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = LatentEmbedding(rng.normal(size=2), np.exp(rng.normal(size=2)))
        b = LatentEmbedding(rng.normal(size=2), np.exp(rng.normal(size=2)))
        assert epistemic_reward(a, b) >= 0


def test_team_reward():
    assert team_reward([0.5, 0.1, 0.0]) == pytest.approx(0.2)
    assert team_reward([0.0, 0.0, 0.0]) == 0.0
    assert team_reward([0.7]) == 0.7
    with pytest.raises(ValueError):
        team_reward([])


def test_reset_prior_and_clear_masks(vae):
    env = _env(vae)
    state, states = env.reset(3)
    assert len(state.Z) == 4 and state.V.shape == (4, 2) and len(state.T) == 3
    for z in state.Z:
        assert np.array_equal(z.mean, np.zeros(2)) and np.array_equal(z.std, np.ones(2))
    assert not state.V.any() and state.t == 0
    _, again = _env(vae).reset(3)
    for a, b in zip(states, again):
        assert np.array_equal(a.vector, b.vector) and np.array_equal(a.mask, b.mask)


def test_reset_rejects_mismatched_vae():
    small = init_m2vae(VaeConfig(n_modalities=1, obs_dims=(2,)))
    with pytest.raises(ValueError):
        PerceivedEnv(WorldConfig(), small, EnvConfig())


def test_policy_state_layout(vae):
    env = _env(vae)
    env.reset(5)
    ps = env.build_policy_state(0)
    assert ps.vector.shape == (6,) and ps.mask.tolist() == [True, True]
    cands = env.world.candidate_pois(0, env.state.V, 2)
    assert cands == env.candidates(0)
    dists = [env.world.path_distance(0, n) / 20 for n in cands]
    np.testing.assert_allclose(ps.vector[4:], dists)
    assert dists == sorted(dists)


def test_policy_state_with_std(vae):
    env = _env(vae, include_std_in_state=True)
    env.reset(5)
    ps = env.build_policy_state(0)
    assert ps.vector.shape == (10,) == (env.state_dim,)
    np.testing.assert_array_equal(ps.vector[4:8], np.ones(4))


def test_policy_state_zero_candidates(vae):
    env = _env(vae)
    env.reset(5)
    env.state.V[:, env.modality(0)] = True
    ps = env.build_policy_state(0)
    assert not ps.vector.any() and not ps.mask.any()


def test_policy_state_has_no_hidden_fields(vae):
    env = _env(vae)
    env.reset(0)
    ps = env.build_policy_state(0)
    assert {f.name for f in dataclasses.fields(ps)} == {"vector", "mask"}


def test_nop_with_empty_candidates(vae):
    env = _env(vae)
    env.reset(5)
    m = env.modality(0)
    env.state.V[:, m] = True
    before = env.state.V.copy()
    res = env.step(0, 2, np.random.default_rng(0))
    assert res.reward == 0.0 and np.array_equal(env.state.V, before)


def test_nop_retires_current_candidates(vae):
    env = _env(vae)
    env.reset(5)
    cands = env.candidates(1)
    res = env.step(1, 2, np.random.default_rng(0))
    m = env.modality(1)
    assert res.reward == 0.0
    assert all(env.state.V[n, m] for n in cands)
    assert env.state.V.sum() == len(cands)


def test_observation_touches_one_poi(vae):
    env = _env(vae)
    env.reset(7)
    n = env.candidates(0)[0]
    z_before = list(env.state.Z)
    res = env.step(0, 0, np.random.default_rng(0))
    assert env.state.V.sum() == 1 and env.state.V[n, env.modality(0)]
    changed = [j for j in range(4) if env.state.Z[j] is not z_before[j]]
    assert changed == [n]
    assert res.info["poi"] == n and res.info["distance"] >= 0
    expected = res.info["kl"] - 0.01 * res.info["distance"]
    assert res.reward == pytest.approx(expected, abs=1e-12)


def test_masked_slot_rejected(vae):
    env = _env(vae)
    env.reset(5)
    m = env.modality(0)
    env.state.V[:, m] = True
    env.state.V[0, m] = False
    with pytest.raises(InvalidActionError):
        env.step(0, 1, np.random.default_rng(0))
    with pytest.raises(InvalidActionError):
        env.step(0, 3, np.random.default_rng(0))


def test_fixed_point_fusion_gives_zero_reward(vae, monkeypatch):
    import episteme.perceived_env as pe
    monkeypatch.setattr(pe, "fuse", lambda params, prior, obs, mask: prior)
    env = _env(vae, move_penalty=0.0)
    env.reset(2)
    assert env.step(0, 0, np.random.default_rng(0)).reward == 0.0


def test_done_when_all_modalities_seen(vae):
    env = _env(vae)
    env.reset(9)
    rng = np.random.default_rng(0)
    steps = observations = 0
    done = False
    while not done:
        k = steps % 3
        ps = env.build_policy_state(k)
        res = env.step(k, 0 if ps.mask[0] else ps.nop, rng)
        done = res.done
        steps += 1
        observations += res.info["poi"] is not None
    assert env.state.V.all()
    assert observations == 8  # every (PoI, modality) pair exactly once


def test_step_budget_terminates(vae):
    env = _env(vae, t_max=1)
    env.reset(0)
    rng = np.random.default_rng(0)
    # three NOPs retire at most 2 PoIs per request: modality 1 stays incomplete
    results = [env.step(k, 2, rng) for k in range(3)]
    assert not env.state.V.all()
    assert [r.done for r in results] == [False, False, True]
    with pytest.raises(RuntimeError):
        env.step(0, 2, rng)


def test_safety_invariants_random_policy(vae):
    env = _env(vae, move_penalty=0.0)
    for seed in range(10):
        rng = np.random.default_rng(seed)
        for k, action, res, v_before, z_before in _rollout(env, seed * 100, 200, rng):
            assert res.reward >= 0.0
            if not res.done:
                assert np.all(env.state.V >= v_before)
            if res.info["poi"] is not None:
                n = res.info["poi"]
                assert all(env.state.Z[j] is z_before[j] for j in range(4) if j != n)
            assert env.state.t <= env.max_requests


def test_reward_lower_bound_with_penalty(vae):
    env = _env(vae, move_penalty=0.05)
    rng = np.random.default_rng(1)
    for _, _, res, _, _ in _rollout(env, 0, 200, rng):
        assert res.reward >= -0.05 * 18


def test_kappa_scales_rewards_and_keeps_ranking(vae):
    for seed in range(5):
        rewards = {}
        for kappa in (1.0, 4.0):
            per_slot = []
            for slot in (0, 1):
                env = _env(vae, kappa=kappa, move_penalty=0.0)
                env.reset(seed)
                per_slot.append(env.step(0, slot, np.random.default_rng(seed)).reward)
            rewards[kappa] = per_slot
        np.testing.assert_allclose(np.array(rewards[4.0]), 4.0 * np.array(rewards[1.0]), rtol=1e-12)
        assert np.argmax(rewards[1.0]) == np.argmax(rewards[4.0])


def test_trace_export(vae, tmp_path):
    env = _env(vae)
    env.reset(0)
    recs = [trace_record(env.step(k, 0, np.random.default_rng(k))) for k in range(3)]
    path = tmp_path / "trace.jsonl"
    write_trace(recs, path)
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(lines) == 3
    assert set(lines[0]) == {"t", "k", "modality", "action", "poi", "r_k", "kl", "distance", "done"}
    assert [r["t"] for r in lines] == [1, 2, 3]
