"""Planning oracle: exact value iteration for tabular models, random-shooting
MPC for KNR models, and the model-based Bellman error."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .envs import KnrEnv, TabularEnv, mixture_transitions


@dataclass(frozen=True)
class TabularModel:
    transitions: np.ndarray
    reward_means: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.transitions, dtype=float)
        R = np.asarray(self.reward_means, dtype=float)
        if P.ndim != 5 or R.shape != P.shape[:4] or P.shape[2] != P.shape[4]:
            raise ValueError(f"malformed model tensors {P.shape} / {R.shape}")
        if np.any(P < 0) or not np.allclose(P.sum(-1), 1.0, rtol=0, atol=1e-12):
            raise ValueError("model transition rows must be probability vectors")
        if np.any(R < 0) or np.any(R > 1):
            raise ValueError("model reward means must lie in [0, 1]")
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "reward_means", R)

    @classmethod
    def mixture(cls, bases, weights, reward_means) -> "TabularModel":
        return cls(mixture_transitions(bases, weights), reward_means)

    @property
    def shape(self):
        return self.reward_means.shape

    def mean_reward(self, level: int, x, a: int) -> float:
        c, s = x
        return float(self.reward_means[c, level, s, a])

    def log_prob(self, level: int, x, a: int, x_next) -> float:
        c, s = x
        p = self.transitions[c, level, s, a, x_next]
        return math.log(p) if p > 0 else -math.inf

    def same_as(self, env) -> bool:
        tab = env.to_tabular()
        return (self.transitions.shape == tab.transitions.shape
                and np.array_equal(self.transitions, tab.transitions)
                and np.array_equal(self.reward_means, tab.reward_means))


@dataclass(frozen=True)
class PlanResult:
    policy: np.ndarray   # (C, H, S) greedy action
    q: np.ndarray        # (C, H, S, A)
    v: np.ndarray        # (C, H + 1, S), v[:, H] == 0
    root_values: np.ndarray  # (C,)

    def policy_table(self) -> np.ndarray:
        A = self.q.shape[-1]
        return np.eye(A)[self.policy]


def plan(model: TabularModel, initial_states=None) -> PlanResult:
    """Finite-horizon value iteration; ties go to the lowest action index."""
    if isinstance(model, TabularEnv):
        initial_states = model.initial_states if initial_states is None else initial_states
        model = model.model
    P, R = model.transitions, model.reward_means
    C, H, S, A = R.shape
    q = np.empty((C, H, S, A))
    v = np.zeros((C, H + 1, S))
    for level in reversed(range(H)):
        q[:, level] = R[:, level] + np.einsum("csat,ct->csa", P[:, level], v[:, level + 1])
        v[:, level] = q[:, level].max(axis=-1)
    policy = q.argmax(axis=-1)  # argmax returns the first maximizer
    init = np.zeros(C, dtype=int) if initial_states is None else np.asarray(initial_states)
    root = v[np.arange(C), 0, init]
    if np.any(v < -1e-12) or np.any(v > 1 + 1e-9):
        raise ValueError("model values leave [0, 1]; rewards are not normalized")
    return PlanResult(policy, q, v, root)


def bellman_error_table(plan_result: PlanResult, env) -> np.ndarray:
    """Q_M - P*[r + V_M^{h+1}] over all (c, level, s, a), using the true env."""
    tab = env.to_tabular()
    backup = tab.reward_means + np.einsum(
        "chsat,cht->chsa", tab.transitions, plan_result.v[:, 1:])
    return plan_result.q - backup


def bellman_error(model: TabularModel, env, plan_result: PlanResult, x, a: int, level: int) -> float:
    c, s = x
    tab = env.to_tabular()
    if not (0 <= level < tab.horizon and 0 <= s < tab.num_states and 0 <= a < tab.num_actions):
        raise IndexError("(level, state, action) out of range")
    backup = tab.reward_means[c, level, s, a] + float(
        tab.transitions[c, level, s, a] @ plan_result.v[c, level + 1])
    return float(plan_result.q[c, level, s, a] - backup)


# --- KNR ---------------------------------------------------------------------

@dataclass(frozen=True)
class KnrModel:
    """A candidate weight matrix W, read through the environment's known parts."""
    weight: np.ndarray
    env: KnrEnv

    def mean_next(self, x, a: int) -> np.ndarray:
        return self.env.mean_next(self.weight, x, a)

    def mean_reward(self, level: int, x, a: int) -> float:
        return self.env.reward(x, a)

    def log_prob(self, level: int, x, a: int, x_next) -> float:
        sigma = self.env.noise_std
        resid = np.asarray(x_next) - self.mean_next(x, a)
        d = resid.shape[0]
        return float(-0.5 * resid @ resid / sigma ** 2 - 0.5 * d * math.log(2 * math.pi * sigma ** 2))

    def same_as(self, env: KnrEnv) -> bool:
        return np.array_equal(self.weight, env.true_weight)


def _shoot(model: KnrModel, x, level: int, budget: int, rng: np.random.Generator):
    """Return (first action, value) of the best open-loop sequence among ``budget`` candidates."""
    env = model.env
    A = env.num_actions
    steps = env.horizon - level
    seqs = rng.integers(A, size=(budget, steps))
    seqs[:, 0] = np.arange(budget) % A  # stratify the first action
    xs = np.repeat(np.asarray(x, float)[None, :], budget, axis=0)
    total = np.zeros(budget)
    for t in range(steps):
        acts = env.action_set[seqs[:, t]]
        total += env.reward_fn(xs, acts)
        xs = env.feature_map(xs, acts) @ model.weight.T
    best = int(np.argmax(total))
    return int(seqs[best, 0]), float(total[best])


def knr_plan(model, env: KnrEnv, rollout_budget: int, rng: np.random.Generator) -> Callable:
    """Random-shooting MPC through the noiseless model dynamics.

    Returns ``act(level, state) -> action index``.  A seed is drawn from ``rng``
    once; every call re-derives its candidate sequences from that seed and the
    level, so the closure is a deterministic function of its arguments.
    """
    if rollout_budget < 1:
        raise ValueError("rollout_budget must be >= 1")
    if env.num_actions == 0:
        raise ValueError("empty action set")
    if not isinstance(model, KnrModel):
        model = KnrModel(np.asarray(model, float), env)
    seed = int(rng.integers(2 ** 63 - 1))

    def act(level: int, state) -> int:
        local = np.random.default_rng([seed, level])
        return _shoot(model, state, level, rollout_budget, local)[0]

    return act


def knr_root_value(model: KnrModel, rollout_budget: int, seed: int = 0) -> float:
    """Planner's estimate of V_M at the initial state (noiseless mean dynamics)."""
    local = np.random.default_rng([seed, 0])
    return _shoot(model, model.env.initial_state, 0, rollout_budget, local)[1]
