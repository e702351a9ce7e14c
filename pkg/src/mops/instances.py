"""Instance generators and a versioned JSON format for environments plus model classes.

Tensors are stored as ``{"shape": [...], "data": [...]}`` with ``data`` the
row-major (C order) flattening.  Index orders:

    transitions[c, level, s, a, s']      reward_means[c, level, s, a]
    class transitions[m, c, level, s, a, s']   class rewards[m, c, level, s, a]
    mixture bases[k, c, level, s, a, s']       mixture weights[m, k]
    knr weights[m, i, j]  (state row i, feature column j)
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .envs import KnrEnv, LinearMixtureEnv, RewardNoise, TabularEnv, mixture_transitions
from .planner import TabularModel
from .posterior import FiniteModelClass

SCHEMA_VERSION = 1
FAMILIES = ("tabular", "mixture", "knr")


class InstanceError(ValueError):
    pass


def encode(a) -> dict:
    a = np.asarray(a)
    return {"shape": list(a.shape), "data": a.ravel(order="C").tolist()}


def decode(obj, dtype=float) -> np.ndarray:
    return np.asarray(obj["data"], dtype=dtype).reshape(obj["shape"], order="C")


# --- KNR building blocks -----------------------------------------------------

@dataclass(frozen=True)
class TanhFeatures:
    """phi_j(x, a) = tanh(U_j . x + V_j . a + b_j) / sqrt(d_phi); ||phi|| <= 1."""
    U: np.ndarray
    V: np.ndarray
    b: np.ndarray

    def __call__(self, x, a):
        x = np.asarray(x, float)
        a = np.asarray(a, float)
        z = x @ self.U.T + a @ self.V.T + self.b
        return np.tanh(z) / math.sqrt(len(self.b))

    def to_json(self) -> dict:
        return {"U": encode(self.U), "V": encode(self.V), "b": encode(self.b)}

    @classmethod
    def from_json(cls, obj) -> "TanhFeatures":
        return cls(decode(obj["U"]), decode(obj["V"]), decode(obj["b"]))


@dataclass(frozen=True)
class BumpReward:
    """r(x, a) = exp(-||x - target||^2) / H, so an episode returns at most 1."""
    target: np.ndarray
    horizon: int

    def __call__(self, x, a):
        d = np.asarray(x, float) - self.target
        return np.exp(-np.sum(d * d, axis=-1)) / self.horizon


# --- instances -------------------------------------------------------------

@dataclass
class Instance:
    family: str
    env: object
    models: list                 # TabularModel, or weight matrices for KNR
    true_index: Optional[int]
    prior_log_weights: np.ndarray
    meta: dict = field(default_factory=dict)
    mixture_weights: Optional[np.ndarray] = None  # (N, K) for the mixture family

    def model_class(self, rollout_budget: int = 64) -> FiniteModelClass:
        if self.family == "knr":
            return FiniteModelClass.knr(self.models, self.env, self.prior_log_weights,
                                        self.true_index, rollout_budget)
        tab = self.env.to_tabular()
        return FiniteModelClass.tabular(self.models, tab.initial_states,
                                        self.prior_log_weights, self.true_index)

    def check_realizable(self) -> Optional[int]:
        """Index of the model equal to the environment, or None."""
        for i, m in enumerate(self.models):
            if self.family == "knr":
                if np.array_equal(np.asarray(m), self.env.true_weight):
                    return i
            elif m.same_as(self.env):
                return i
        return None


def _dirichlet_rows(rng, shape, S):
    return rng.dirichlet(np.ones(S), size=shape)


def make_tabular(num_contexts=2, num_states=3, num_actions=2, horizon=2, class_size=8,
                 perturbation=0.5, seed=0, include_true=True,
                 reward_noise=RewardNoise.BERNOULLI) -> Instance:
    """Random P*, R* and a class of Dirichlet-perturbed copies.

    Each model row is (1 - s) P*(.|x, a) + s Dir(1); rewards are mixed the same
    way with fresh uniform draws.  Mean rewards live in [0, 1/H].
    """
    if min(num_contexts, num_states, num_actions, horizon, class_size) < 1:
        raise InstanceError("all dimensions must be positive")
    if not 0 < perturbation <= 1:
        raise InstanceError("perturbation must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    C, S, A, H = num_contexts, num_states, num_actions, horizon
    P = _dirichlet_rows(rng, (C, H, S, A), S)
    R = rng.uniform(0, 1, size=(C, H, S, A)) / H
    init = rng.integers(S, size=C)
    D = rng.dirichlet(np.ones(C))
    env = TabularEnv(P, R, D, init, RewardNoise(reward_noise))
    models = []
    n_perturbed = class_size - 1 if include_true else class_size
    for _ in range(n_perturbed):
        Pm = (1 - perturbation) * P + perturbation * _dirichlet_rows(rng, (C, H, S, A), S)
        Rm = (1 - perturbation) * R + perturbation * rng.uniform(0, 1, size=R.shape) / H
        models.append(TabularModel(Pm, Rm))
    true_index = None
    if include_true:
        true_index = int(rng.integers(class_size))
        models.insert(true_index, TabularModel(P.copy(), R.copy()))
    meta = dict(num_contexts=C, num_states=S, num_actions=A, horizon=H, class_size=class_size,
                perturbation=perturbation, seed=seed, include_true=include_true)
    return Instance("tabular", env, models, true_index, np.zeros(class_size), meta)


def simplex_grid(dim: int, step: float) -> np.ndarray:
    """All points of the probability simplex in R^dim with coordinates on a step grid."""
    n = round(1 / step)
    if not math.isclose(n * step, 1.0):
        raise InstanceError("grid step must divide 1")
    pts = [c for c in itertools.product(range(n + 1), repeat=dim) if sum(c) == n]
    return np.array(pts, float) / n


def make_mixture(num_bases=3, num_contexts=1, num_states=3, num_actions=2, horizon=2,
                 grid_step=0.5, seed=0, include_true=True,
                 reward_noise=RewardNoise.BERNOULLI) -> Instance:
    """Linear mixture env with nu* on a simplex grid; the class is the whole grid."""
    if min(num_bases, num_contexts, num_states, num_actions, horizon) < 1:
        raise InstanceError("all dimensions must be positive")
    rng = np.random.default_rng(seed)
    C, S, A, H = num_contexts, num_states, num_actions, horizon
    bases = np.stack([_dirichlet_rows(rng, (C, H, S, A), S) for _ in range(num_bases)])
    R = rng.uniform(0, 1, size=(C, H, S, A)) / H
    grid = simplex_grid(num_bases, grid_step)
    k_true = int(rng.integers(len(grid)))
    nu = grid[k_true]
    env = LinearMixtureEnv(bases, nu, R, rng.dirichlet(np.ones(C)), rng.integers(S, size=C),
                           RewardNoise(reward_noise))
    if not include_true:
        grid = np.delete(grid, k_true, axis=0)
    models = [TabularModel(mixture_transitions(bases, w), R.copy()) for w in grid]
    true_index = k_true if include_true else None
    meta = dict(num_bases=num_bases, num_contexts=C, num_states=S, num_actions=A, horizon=H,
                grid_step=grid_step, seed=seed, include_true=include_true)
    return Instance("mixture", env, models, true_index, np.zeros(len(models)), meta, grid)


def random_spectral(rng, shape, bound) -> np.ndarray:
    W = rng.normal(size=shape)
    return W * (bound * rng.uniform(0.3, 1.0) / np.linalg.norm(W, 2))


def make_knr(state_dim=2, feature_dim=3, class_size=16, noise_std=0.4, horizon=3,
             num_actions=5, weight_bound=1.0, min_separation=0.3, seed=0,
             include_true=True) -> Instance:
    """KNR with tanh features; the class is W* plus random W with ||W||_2 <= bound
    and ||W - W*||_2 >= min_separation."""
    if min(state_dim, feature_dim, class_size, horizon, num_actions) < 1:
        raise InstanceError("all dimensions must be positive")
    rng = np.random.default_rng(seed)
    feats = TanhFeatures(rng.normal(size=(feature_dim, state_dim)),
                         rng.normal(size=(feature_dim, 1)), rng.normal(size=feature_dim))
    actions = np.linspace(-1, 1, num_actions)[:, None]
    target = rng.uniform(-0.5, 0.5, size=state_dim)
    W_star = random_spectral(rng, (state_dim, feature_dim), weight_bound)
    x0 = np.zeros(state_dim)
    probes = np.vstack([x0, rng.uniform(-1, 1, size=(4, state_dim))])
    env = KnrEnv(feats, W_star, noise_std, actions, horizon, BumpReward(target, horizon), x0,
                 1.0, weight_bound, probes)
    others = []
    while len(others) < (class_size - 1 if include_true else class_size):
        W = random_spectral(rng, W_star.shape, weight_bound)
        if np.linalg.norm(W - W_star, 2) >= min_separation:
            others.append(W)
    true_index = None
    if include_true:
        true_index = int(rng.integers(class_size))
        others.insert(true_index, W_star.copy())
    meta = dict(state_dim=state_dim, feature_dim=feature_dim, class_size=class_size,
                noise_std=noise_std, horizon=horizon, num_actions=num_actions,
                weight_bound=weight_bound, min_separation=min_separation, seed=seed,
                include_true=include_true)
    return Instance("knr", env, others, true_index, np.zeros(class_size), meta)


REFERENCE = dict(num_contexts=2, num_states=3, num_actions=2, horizon=2, class_size=8,
                 perturbation=0.5, seed=2024)


def reference_instance() -> Instance:
    """The fixed |M| = 8 tabular instance used by the acceptance runs."""
    return make_tabular(**REFERENCE)


def generate(family: str, **dims) -> Instance:
    makers = {"tabular": make_tabular, "mixture": make_mixture, "knr": make_knr}
    if family not in makers:
        raise InstanceError(f"unsupported family {family!r}; expected one of {FAMILIES}")
    try:
        return makers[family](**dims)
    except TypeError as exc:
        raise InstanceError(str(exc)) from None


# --- JSON ---------------------------------------------------------------

def to_json(inst: Instance) -> dict:
    out = {"schema_version": SCHEMA_VERSION, "family": inst.family, "meta": inst.meta,
           "true_index": inst.true_index, "prior_log_weights": encode(inst.prior_log_weights)}
    env = inst.env
    if inst.family == "knr":
        out["env"] = {"features": env.feature_map.to_json(), "true_weight": encode(env.true_weight),
                      "noise_std": env.noise_std, "action_set": encode(env.action_set),
                      "horizon": env.horizon, "reward_target": encode(env.reward_fn.target),
                      "initial_state": encode(env.initial_state),
                      "feature_bound": env.feature_bound, "weight_bound": env.weight_bound,
                      "probe_states": encode(env.probe_states)}
        out["class"] = {"weights": encode(np.stack(inst.models))}
        return out
    common = {"reward_means": encode(env.reward_means), "context_dist": encode(env.context_dist),
              "initial_states": encode(env.initial_states), "reward_noise": env.reward_noise.value}
    if inst.family == "mixture":
        out["env"] = dict(common, bases=encode(np.stack(env.base_transitions)),
                          true_weights=encode(env.true_weights))
        out["class"] = {"mixture_weights": encode(inst.mixture_weights)}
    else:
        out["env"] = dict(common, transitions=encode(env.transitions))
        out["class"] = {"transitions": encode(np.stack([m.transitions for m in inst.models])),
                        "reward_means": encode(np.stack([m.reward_means for m in inst.models]))}
    return out


def from_json(obj: dict) -> Instance:
    """Rebuild and re-validate an instance written by :func:`to_json`."""
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise InstanceError(f"schema_version must be {SCHEMA_VERSION}")
    family = obj.get("family")
    if family not in FAMILIES:
        raise InstanceError(f"family: unsupported value {family!r}")
    try:
        e, k = obj["env"], obj["class"]
        prior = decode(obj["prior_log_weights"])
        meta = obj.get("meta", {})
        true_index = obj.get("true_index")
        if family == "knr":
            H = int(e["horizon"])
            env = KnrEnv(TanhFeatures.from_json(e["features"]), decode(e["true_weight"]),
                         float(e["noise_std"]), decode(e["action_set"]), H,
                         BumpReward(decode(e["reward_target"]), H), decode(e["initial_state"]),
                         float(e["feature_bound"]), float(e["weight_bound"]),
                         decode(e["probe_states"]))
            models = list(decode(k["weights"]))
            for W in models:
                if np.linalg.norm(W, 2) > env.weight_bound + 1e-12:
                    raise InstanceError("class.weights: spectral norm exceeds weight_bound")
            return Instance(family, env, models, true_index, prior, meta)
        R = decode(e["reward_means"])
        D = decode(e["context_dist"])
        init = decode(e["initial_states"], int)
        noise = RewardNoise(e["reward_noise"])
        if family == "mixture":
            bases = decode(e["bases"])
            env = LinearMixtureEnv(bases, decode(e["true_weights"]), R, D, init, noise)
            mw = decode(k["mixture_weights"])
            models = [TabularModel(mixture_transitions(bases, w), R.copy()) for w in mw]
            return Instance(family, env, models, true_index, prior, meta, mw)
        env = TabularEnv(decode(e["transitions"]), R, D, init, noise)
        models = [TabularModel(P, Rm) for P, Rm in zip(decode(k["transitions"]), decode(k["reward_means"]))]
        return Instance(family, env, models, true_index, prior, meta)
    except KeyError as exc:
        raise InstanceError(f"missing field {exc.args[0]!r}") from None


def save_instance(inst: Instance, path) -> None:
    Path(path).write_text(json.dumps(to_json(inst)))


def load_instance(path) -> Instance:
    return from_json(json.loads(Path(path).read_text()))


def random_tabular_triple(rng: np.random.Generator, max_states=5, max_actions=3, max_horizon=3,
                          max_models=8, max_contexts=2):
    """A random (env, class, p) with independent Dirichlet models and p ~ Dir(1)."""
    S = int(rng.integers(1, max_states + 1))
    A = int(rng.integers(1, max_actions + 1))
    H = int(rng.integers(1, max_horizon + 1))
    C = int(rng.integers(1, max_contexts + 1))
    N = int(rng.integers(1, max_models + 1))
    env = TabularEnv(_dirichlet_rows(rng, (C, H, S, A), S), rng.uniform(0, 1, (C, H, S, A)) / H,
                     rng.dirichlet(np.ones(C)), rng.integers(S, size=C))
    models = [TabularModel(_dirichlet_rows(rng, (C, H, S, A), S), rng.uniform(0, 1, (C, H, S, A)) / H)
              for _ in range(N)]
    cls = FiniteModelClass.tabular(models, env.initial_states)
    return env, cls, rng.dirichlet(np.ones(N))
