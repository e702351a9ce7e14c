"""Policy generators pi_gen(h, p) and the G-optimal design solver."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .envs import KnrEnv
from .planner import knr_plan
from .posterior import FiniteModelClass, LogPosterior, sample_model

DESIGN_TOL = 1e-3
DESIGN_MAX_ITERS = 10_000
DESIGN_RIDGE = 1e-10


class GeneratorKind(str, enum.Enum):
    QTYPE = "q_type"
    V_UNIFORM = "v_uniform"
    V_DOUBLE = "v_double"
    V_DESIGN = "v_design"


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class DesignDist:
    weights: np.ndarray
    max_leverage: float
    dim: int
    iterations: int


def _leverages(X: np.ndarray, w: np.ndarray) -> np.ndarray:
    cov = (X * w[:, None]).T @ X
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        L = np.linalg.cholesky(cov + DESIGN_RIDGE * np.eye(len(cov)))
    Z = np.linalg.solve(L, X.T)
    return np.sum(Z * Z, axis=0)


def g_optimal_design(features, tol: float = DESIGN_TOL,
                     max_iters: int = DESIGN_MAX_ITERS) -> DesignDist:
    """Frank-Wolfe (Fedorov-Wynn) on log det of the design covariance.

    Stops once the largest leverage phi^T Sigma(w)^{-1} phi is within a factor
    (1 + tol) of the rank d of the features; by Kiefer-Wolfowitz d is optimal.
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    if X.size == 0 or not np.any(X):
        raise ValueError("features must contain a nonzero vector")
    # work in an orthonormal basis of the span so the covariance is full rank
    U, sv, Vt = np.linalg.svd(X, full_matrices=False)
    d = int(np.sum(sv > sv[0] * 1e-12))
    Xr = X @ Vt[:d].T
    n = len(Xr)
    w = np.full(n, 1.0 / n)
    it = 0
    lev = _leverages(Xr, w)
    while it < max_iters:
        k = int(np.argmax(lev))
        g = lev[k]
        if g <= d * (1 + tol):
            break
        step = (g / d - 1.0) / (g - 1.0)
        w *= 1.0 - step
        w[k] += step
        lev = _leverages(Xr, w)
        it += 1
    w = np.clip(w, 0.0, None)
    w /= w.sum()
    return DesignDist(w, float(np.max(lev)), d, it)


@dataclass
class PolicyGenerator:
    kind: GeneratorKind
    feature_map: Optional[Callable] = None  # (context, level, state) -> (A, d) array
    knr_budget: int = 32
    _designs: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.kind = GeneratorKind(self.kind)
        if self.kind is GeneratorKind.V_DESIGN and self.feature_map is None:
            raise GeneratorError("the design generator needs a feature map")

    def design(self, context, level, state) -> np.ndarray:
        key = (context, level, state)
        if key not in self._designs:
            self._designs[key] = g_optimal_design(self.feature_map(context, level, state)).weights
        return self._designs[key]


@dataclass(frozen=True)
class GeneratedPolicy:
    kind: GeneratorKind
    h_t: int
    draws: tuple
    table: Optional[np.ndarray] = None  # tabular: (C, H, S, A)
    act: Optional[Callable] = None      # KNR: (level, state) -> action

    @property
    def executable(self):
        return self.table if self.table is not None else self.act


def generate(gen: PolicyGenerator, h_t: int, posterior: LogPosterior,
             model_class: FiniteModelClass, rng: np.random.Generator,
             env=None) -> GeneratedPolicy:
    """Build pi_gen(h_t, p).  The special action (if any) is taken at level h_t - 1.

    Randomness consumed from ``rng`` does not depend on ``h_t``.
    """
    kind = gen.kind
    m = sample_model(posterior, rng)
    draws = (m,)
    if kind is GeneratorKind.V_DOUBLE:
        draws = (m, sample_model(posterior, rng))
    if model_class.is_tabular:
        return _tabular_policy(gen, h_t, draws, model_class)
    if env is None or not isinstance(env, KnrEnv):
        raise GeneratorError("KNR policies need the KNR environment")
    return _knr_policy(gen, h_t, draws, model_class, env, rng)


def _tabular_policy(gen, h_t, draws, model_class) -> GeneratedPolicy:
    base = model_class.plans[draws[0]].policy_table()
    H = base.shape[1]
    if not 1 <= h_t <= H:
        raise GeneratorError(f"h_t must lie in [1, {H}]")
    level = h_t - 1
    if gen.kind is GeneratorKind.V_UNIFORM:
        base[:, level] = 1.0 / base.shape[-1]
    elif gen.kind is GeneratorKind.V_DOUBLE:
        base[:, level] = model_class.plans[draws[1]].policy_table()[:, level]
    elif gen.kind is GeneratorKind.V_DESIGN:
        C, _, S, _ = base.shape
        for c in range(C):
            for s in range(S):
                base[c, level, s] = gen.design(c, level, s)
    return GeneratedPolicy(gen.kind, h_t, draws, table=base)


def _knr_policy(gen, h_t, draws, model_class, env: KnrEnv, rng) -> GeneratedPolicy:
    if gen.kind is GeneratorKind.V_DESIGN:
        raise GeneratorError("design generator is only wired for tabular classes")
    follow = knr_plan(model_class.models[draws[0]], env, gen.knr_budget, rng)
    other = (knr_plan(model_class.models[draws[1]], env, gen.knr_budget, rng)
             if gen.kind is GeneratorKind.V_DOUBLE else None)
    seed = int(rng.integers(2 ** 63 - 1))
    level_special = h_t - 1
    kind = gen.kind

    def act(level, state):
        if level == level_special and kind is GeneratorKind.V_UNIFORM:
            return int(np.random.default_rng([seed, level]).integers(env.num_actions))
        if level == level_special and kind is GeneratorKind.V_DOUBLE:
            return other(level, state)
        return follow(level, state)

    return GeneratedPolicy(kind, h_t, draws, act=act)
