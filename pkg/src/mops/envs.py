"""Episodic contextual MDP environments and trajectory rollout.

Tabular conventions
-------------------
Contexts are folded into the state: every context ``c`` owns its own slice of
the dynamics and rewards, and an episode in context ``c`` starts from state
``initial_states[c]``.  Arrays are indexed

    transitions[c, level, s, a, s']    reward_means[c, level, s, a]

with ``level`` running over ``0..H-1``.  Policies for tabular environments are
stochastic tables ``pi[c, level, s, a]``; deterministic policies are one-hot.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

PROB_ATOL = 1e-12


class RewardNoise(str, enum.Enum):
    BERNOULLI = "bernoulli"
    NONE = "none"


class UnsupportedEnvError(TypeError):
    pass


class PolicyError(ValueError):
    pass


def _check_simplex(x: np.ndarray, axis: int, what: str) -> None:
    if np.any(x < 0):
        raise ValueError(f"{what} has negative entries")
    if not np.allclose(x.sum(axis=axis), 1.0, rtol=0.0, atol=PROB_ATOL):
        raise ValueError(f"{what} does not sum to one")


def max_trajectory_reward(transitions: np.ndarray, reward_means: np.ndarray,
                          initial_states: np.ndarray) -> float:
    """Largest sum of mean rewards along any trajectory with positive probability."""
    C, H, S, A, _ = transitions.shape
    best = 0.0
    for c in range(C):
        # best-case reward-to-go restricted to reachable successors
        togo = np.zeros(S)
        for level in reversed(range(H)):
            reach = transitions[c, level] > 0.0
            succ = np.where(reach, togo[None, None, :], -np.inf).max(axis=2)
            togo = (reward_means[c, level] + succ).max(axis=1)
        best = max(best, float(togo[initial_states[c]]))
    return best


@dataclass(frozen=True)
class TabularEnv:
    transitions: np.ndarray
    reward_means: np.ndarray
    context_dist: np.ndarray
    initial_states: Optional[np.ndarray] = None
    reward_noise: RewardNoise = RewardNoise.BERNOULLI

    def __post_init__(self):
        P = np.asarray(self.transitions, dtype=float)
        R = np.asarray(self.reward_means, dtype=float)
        D = np.asarray(self.context_dist, dtype=float)
        if P.ndim != 5 or P.shape[2] != P.shape[4]:
            raise ValueError(f"transitions must have shape (C,H,S,A,S), got {P.shape}")
        if R.shape != P.shape[:4]:
            raise ValueError(f"reward_means shape {R.shape} does not match transitions {P.shape[:4]}")
        if D.shape != (P.shape[0],):
            raise ValueError("context_dist length must equal the number of contexts")
        init = (np.zeros(P.shape[0], dtype=int) if self.initial_states is None
                else np.asarray(self.initial_states, dtype=int))
        if init.shape != (P.shape[0],) or np.any(init < 0) or np.any(init >= P.shape[2]):
            raise ValueError("initial_states must hold one valid state per context")
        _check_simplex(P, -1, "transition row")
        _check_simplex(D, 0, "context_dist")
        if np.any(R < 0) or np.any(R > 1):
            raise ValueError("reward_means must lie in [0, 1]")
        if max_trajectory_reward(P, R, init) > 1.0 + 1e-12:
            raise ValueError("sum of mean rewards along a trajectory exceeds 1")
        for name, val in (("transitions", P), ("reward_means", R),
                          ("context_dist", D), ("initial_states", init)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "reward_noise", RewardNoise(self.reward_noise))

    @property
    def num_contexts(self) -> int:
        return self.transitions.shape[0]

    @property
    def horizon(self) -> int:
        return self.transitions.shape[1]

    @property
    def num_states(self) -> int:
        return self.transitions.shape[2]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[3]

    @property
    def model(self):
        from .planner import TabularModel
        return TabularModel(self.transitions, self.reward_means)

    def to_tabular(self) -> "TabularEnv":
        return self


@dataclass(frozen=True)
class LinearMixtureEnv:
    """Dynamics are a convex combination of known base transition tensors."""
    base_transitions: Sequence[np.ndarray]
    true_weights: np.ndarray
    reward_means: np.ndarray
    context_dist: np.ndarray
    initial_states: Optional[np.ndarray] = None
    reward_noise: RewardNoise = RewardNoise.BERNOULLI
    _tabular: TabularEnv = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        bases = np.stack([np.asarray(b, dtype=float) for b in self.base_transitions])
        nu = np.asarray(self.true_weights, dtype=float)
        if nu.shape != (bases.shape[0],):
            raise ValueError("need one mixture weight per base model")
        _check_simplex(nu, 0, "mixture weights")
        bases.setflags(write=False)
        nu.setflags(write=False)
        object.__setattr__(self, "base_transitions", bases)
        object.__setattr__(self, "true_weights", nu)
        tab = TabularEnv(mixture_transitions(bases, nu), self.reward_means,
                         self.context_dist, self.initial_states, self.reward_noise)
        object.__setattr__(self, "_tabular", tab)

    def to_tabular(self) -> TabularEnv:
        return self._tabular

    def __getattr__(self, name):
        # expose the materialized tabular view (horizon, num_states, model, ...)
        if name.startswith("_"):
            raise AttributeError(name)
        return getattr(self._tabular, name)


def mixture_transitions(bases: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return np.tensordot(np.asarray(weights, float), np.asarray(bases, float), axes=(0, 0))


FeatureMap = Callable[[np.ndarray, np.ndarray], np.ndarray]
RewardFn = Callable[[np.ndarray, np.ndarray], float]


@dataclass(frozen=True)
class KnrEnv:
    """Kernelized nonlinear regulator: x' = W* phi(x, a) + N(0, sigma^2 I).

    ``feature_map(x, a)`` and ``reward_fn(x, a)`` must broadcast over a leading
    batch axis (the planner evaluates many candidate sequences at once).
    Rewards must keep the episode return in [0, 1].
    """
    feature_map: FeatureMap
    true_weight: np.ndarray
    noise_std: float
    action_set: np.ndarray
    horizon: int
    reward_fn: RewardFn
    initial_state: np.ndarray
    feature_bound: float = 1.0
    weight_bound: float = 1.0
    probe_states: Optional[np.ndarray] = None

    def __post_init__(self):
        W = np.asarray(self.true_weight, dtype=float)
        acts = np.asarray(self.action_set, dtype=float)
        if acts.ndim == 1:
            acts = acts[:, None]
        x0 = np.asarray(self.initial_state, dtype=float)
        if self.noise_std <= 0:
            raise ValueError("noise_std must be positive")
        if W.shape[0] != x0.shape[0]:
            raise ValueError("true_weight rows must equal the state dimension")
        if len(acts) == 0:
            raise ValueError("empty action set")
        if np.linalg.norm(W, 2) > self.weight_bound + 1e-12:
            raise ValueError("spectral norm of true_weight exceeds weight_bound")
        object.__setattr__(self, "true_weight", W)
        object.__setattr__(self, "action_set", acts)
        object.__setattr__(self, "initial_state", x0)
        probes = self.probe_states if self.probe_states is not None else x0[None, :]
        object.__setattr__(self, "probe_states", np.atleast_2d(np.asarray(probes, float)))
        for x in self.probe_states:
            for a in acts:
                phi = self.feature_map(x, a)
                if phi.shape != (W.shape[1],):
                    raise ValueError("feature_map output has the wrong dimension")
                if np.linalg.norm(phi) > self.feature_bound + 1e-12:
                    raise ValueError("feature norm exceeds feature_bound at a probe point")

    @property
    def state_dim(self) -> int:
        return self.true_weight.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.true_weight.shape[1]

    @property
    def num_actions(self) -> int:
        return len(self.action_set)

    @property
    def num_contexts(self) -> int:
        return 1

    @property
    def kappa(self) -> float:
        return float(self.noise_std)

    def features(self, x: np.ndarray, action_index: int) -> np.ndarray:
        return self.feature_map(x, self.action_set[action_index])

    def mean_next(self, W: np.ndarray, x: np.ndarray, action_index: int) -> np.ndarray:
        return W @ self.features(x, action_index)

    def reward(self, x: np.ndarray, action_index: int) -> float:
        return float(self.reward_fn(x, self.action_set[action_index]))


Env = Union[TabularEnv, LinearMixtureEnv, KnrEnv]


@dataclass(frozen=True)
class Step:
    level: int
    state: object
    action: int
    reward: float
    next_state: object


@dataclass(frozen=True)
class Trajectory:
    context: int
    steps: tuple

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def last(self) -> Step:
        return self.steps[-1]


def sample_context(env: Env, rng: np.random.Generator) -> int:
    if isinstance(env, KnrEnv):
        return 0
    D = env.context_dist
    if len(D) == 1:
        return 0
    return int(rng.choice(len(D), p=D))


def _policy_row(policy: np.ndarray, c: int, level: int, s: int) -> np.ndarray:
    row = policy[c, level, s]
    if not (np.all(np.isfinite(row)) and np.all(row >= 0)
            and abs(row.sum() - 1.0) <= 1e-9):
        raise PolicyError(f"policy undefined at context={c} level={level} state={s}")
    return row


def rollout(env: Env, policy, context: int, num_steps: int,
            rng: np.random.Generator) -> Trajectory:
    """Play ``num_steps`` steps from the start of an episode.

    ``policy`` is a ``(C, H, S, A)`` table for tabular environments and a
    callable ``(level, state) -> action index`` for KNR.
    """
    H = env.horizon
    if not 1 <= num_steps <= H:
        raise ValueError(f"num_steps must be in [1, {H}], got {num_steps}")
    if isinstance(env, KnrEnv):
        return _rollout_knr(env, policy, num_steps, rng)
    tab = env.to_tabular()
    policy = np.asarray(policy)
    s = int(tab.initial_states[context])
    steps = []
    for level in range(num_steps):
        row = _policy_row(policy, context, level, s)
        a = int(rng.choice(len(row), p=row)) if row.max() < 1.0 else int(row.argmax())
        mean = tab.reward_means[context, level, s, a]
        if tab.reward_noise is RewardNoise.BERNOULLI:
            r = float(rng.random() < mean)
        else:
            r = float(mean)
        s_next = int(rng.choice(tab.num_states, p=tab.transitions[context, level, s, a]))
        steps.append(Step(level, s, a, r, s_next))
        s = s_next
    return Trajectory(context, tuple(steps))


def _rollout_knr(env: KnrEnv, policy, num_steps, rng) -> Trajectory:
    x = env.initial_state.copy()
    steps = []
    for level in range(num_steps):
        a = policy(level, x)
        if a is None or not 0 <= a < env.num_actions:
            raise PolicyError(f"policy undefined at level={level} state={x}")
        r = env.reward(x, a)
        x_next = env.mean_next(env.true_weight, x, a) + env.noise_std * rng.standard_normal(env.state_dim)
        steps.append(Step(level, x, int(a), r, x_next))
        x = x_next
    return Trajectory(0, tuple(steps))


def exact_policy_value(env: Env, policy: np.ndarray, context: int) -> float:
    """Exact expected return of a tabular policy by forward propagation."""
    if isinstance(env, KnrEnv):
        raise UnsupportedEnvError("exact_policy_value needs an enumerable state space")
    tab = env.to_tabular()
    pi = np.asarray(policy, dtype=float)
    dist = np.zeros(tab.num_states)
    dist[tab.initial_states[context]] = 1.0
    value = 0.0
    for level in range(tab.horizon):
        sa = dist[:, None] * pi[context, level]
        value += float(np.sum(sa * tab.reward_means[context, level]))
        dist = np.einsum("sa,sat->t", sa, tab.transitions[context, level])
    return value


def state_action_occupancy(env: Env, policy: np.ndarray, context: int) -> np.ndarray:
    """Distribution of (x^h, a^h) at every level, shape ``(H, S, A)``."""
    tab = env.to_tabular()
    pi = np.asarray(policy, dtype=float)
    out = np.empty((tab.horizon, tab.num_states, tab.num_actions))
    dist = np.zeros(tab.num_states)
    dist[tab.initial_states[context]] = 1.0
    for level in range(tab.horizon):
        out[level] = dist[:, None] * pi[context, level]
        dist = np.einsum("sa,sat->t", out[level], tab.transitions[context, level])
    return out


def uniform_policy(env: Env) -> np.ndarray:
    tab = env.to_tabular()
    C, H, S, A = tab.reward_means.shape
    return np.full((C, H, S, A), 1.0 / A)
