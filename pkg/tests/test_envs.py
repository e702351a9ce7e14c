import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mops.envs import (KnrEnv, LinearMixtureEnv, PolicyError, RewardNoise, TabularEnv,
                       UnsupportedEnvError, exact_policy_value, mixture_transitions, rollout,
                       sample_context, state_action_occupancy, uniform_policy)
from mops.instances import make_knr, make_tabular


def _random_env(seed, C=1, H=2, S=3, A=2):
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(S), size=(C, H, S, A))
    R = rng.uniform(0, 1, (C, H, S, A)) / H
    return TabularEnv(P, R, np.full(C, 1 / C), rng.integers(S, size=C))


def test_rejects_non_stochastic_rows():
    env = _random_env(0)
    P = env.transitions.copy()
    P[0, 0, 0, 0, 0] += 0.1
    with pytest.raises(ValueError, match="sum to one"):
        TabularEnv(P, env.reward_means, env.context_dist)


def test_rejects_returns_above_one():
    env = _random_env(0)
    with pytest.raises(ValueError, match="exceeds 1"):
        TabularEnv(env.transitions, np.full(env.reward_means.shape, 0.9), env.context_dist)


def test_arrays_are_read_only():
    env = _random_env(1)
    with pytest.raises(ValueError):
        env.transitions[0, 0, 0, 0, 0] = 1.0


def test_rollout_length_and_bounds(rng):
    env = _random_env(2)
    pol = uniform_policy(env)
    assert len(rollout(env, pol, 0, 1, rng)) == 1
    assert len(rollout(env, pol, 0, 2, rng)) == 2
    for bad in (0, 3):
        with pytest.raises(ValueError):
            rollout(env, pol, 0, bad, rng)


def test_undefined_policy_raises(rng):
    env = _random_env(3)
    pol = uniform_policy(env)
    pol[0, 0, env.initial_states[0]] = 0.0
    with pytest.raises(PolicyError):
        rollout(env, pol, 0, 1, rng)


def test_exact_value_matches_monte_carlo(rng):
    env = _random_env(4, C=2, H=3, S=4, A=3)
    pol = uniform_policy(env)
    for c in range(2):
        exact = exact_policy_value(env, pol, c)
        returns = np.array([sum(s.reward for s in rollout(env, pol, c, 3, rng).steps)
                            for _ in range(4000)])
        se = returns.std(ddof=1) / math.sqrt(len(returns))
        assert abs(returns.mean() - exact) < 4 * se


@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 4), st.integers(1, 3))
def test_occupancy_is_a_distribution_per_level(seed, H, S, A):
    env = _random_env(seed, H=H, S=S, A=A)
    rng = np.random.default_rng(seed)
    pol = rng.dirichlet(np.ones(A), size=(1, H, S))
    occ = state_action_occupancy(env, pol, 0)
    assert np.allclose(occ.sum(axis=(1, 2)), 1.0, atol=1e-12)
    value = float(np.sum(occ * env.reward_means[0]))
    assert value == pytest.approx(exact_policy_value(env, pol, 0), abs=1e-12)


def test_deterministic_rewards_when_noise_off(rng):
    env = _random_env(5)
    env = TabularEnv(env.transitions, env.reward_means, env.context_dist, reward_noise=RewardNoise.NONE)
    traj = rollout(env, uniform_policy(env), 0, 2, rng)
    for s in traj.steps:
        assert s.reward == env.reward_means[0, s.level, s.state, s.action]


def test_mixture_materializes_weighted_sum():
    rng = np.random.default_rng(6)
    bases = rng.dirichlet(np.ones(3), size=(2, 1, 2, 3, 2))
    nu = np.array([0.25, 0.75])
    env = LinearMixtureEnv(bases, nu, np.full((1, 2, 3, 2), 0.1), np.ones(1))
    assert np.allclose(env.transitions, 0.25 * bases[0] + 0.75 * bases[1])
    assert np.allclose(mixture_transitions(bases, nu), env.to_tabular().transitions)
    with pytest.raises(ValueError):
        LinearMixtureEnv(bases, np.array([0.5, 0.6]), np.full((1, 2, 3, 2), 0.1), np.ones(1))


def test_sample_context_follows_distribution(rng):
    inst = make_tabular(num_contexts=3, seed=3)
    draws = [sample_context(inst.env, rng) for _ in range(20_000)]
    freq = np.bincount(draws, minlength=3) / len(draws)
    assert np.allclose(freq, inst.env.context_dist, atol=0.015)


def test_knr_validation_and_rollout(rng):
    inst = make_knr(seed=1)
    env = inst.env
    assert env.kappa == env.noise_std
    with pytest.raises(ValueError, match="spectral"):
        KnrEnv(env.feature_map, 3 * np.eye(2, 3), 0.3, env.action_set, 2, env.reward_fn,
               env.initial_state)
    with pytest.raises(ValueError, match="noise_std"):
        KnrEnv(env.feature_map, env.true_weight, 0.0, env.action_set, 2, env.reward_fn,
               env.initial_state)
    traj = rollout(env, lambda level, x: 0, 0, env.horizon, rng)
    assert len(traj) == env.horizon
    with pytest.raises(UnsupportedEnvError):
        exact_policy_value(env, None, 0)


def test_knr_noise_has_stated_scale():
    env = make_knr(seed=2).env
    rng = np.random.default_rng(0)
    resid = np.array([rollout(env, lambda l, x: 1, 0, 1, rng).steps[0].next_state
                      - env.mean_next(env.true_weight, env.initial_state, 1) for _ in range(5000)])
    assert np.allclose(resid.std(axis=0), env.noise_std, rtol=0.05)
