"""Structural quantities and bound checkers on enumerable instances.

All expectations over (x^h, a^h) are computed exactly from occupancy measures
in the true environment.  Decoupling coefficients are maxima over a declared
grid of distributions p, hence lower bounds on the true coefficient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .divergences import model_kl_radius, omega, tabular_loss_tables
from .envs import KnrEnv, exact_policy_value, state_action_occupancy
from .generators import GeneratorKind, PolicyGenerator
from .planner import bellman_error_table, plan
from .posterior import FiniteModelClass

EIG_TOL = 1e-12


class BisectionError(RuntimeError):
    pass


# --- effective dimension -------------------------------------------------------

@dataclass(frozen=True)
class FeatureEnsemble:
    """Groups of weighted feature vectors; group g encodes p(. | z1_g).

    ``groups[g] = (vectors (n_g, d), weights (n_g,))``.
    """
    groups: tuple

    @classmethod
    def from_groups(cls, groups) -> "FeatureEnsemble":
        out = []
        dim = None
        for vecs, w in groups:
            vecs = np.atleast_2d(np.asarray(vecs, float))
            w = np.asarray(w, float)
            if dim is None:
                dim = vecs.shape[1]
            if vecs.shape[1] != dim or len(w) != len(vecs):
                raise ValueError("inconsistent ensemble dimensions")
            out.append((vecs, w))
        return cls(tuple(out))

    @property
    def dim(self) -> int:
        return self.groups[0][0].shape[1]

    def spectra(self):
        for vecs, w in self.groups:
            sigma = (vecs * w[:, None]).T @ vecs
            yield np.clip(np.linalg.eigvalsh(sigma), 0.0, None)

    def trace_ratio(self, lam: float) -> float:
        """K(lambda) = sup over groups of trace((Sigma + lambda I)^{-1} Sigma)."""
        return max(float(np.sum(ev / (ev + lam))) for ev in self.spectra())

    def max_rank(self) -> int:
        return max(int(np.sum(ev > EIG_TOL * max(ev.max(), 1.0))) for ev in self.spectra())

    def max_trace(self) -> float:
        return max(float(ev.sum()) for ev in self.spectra())


def effective_dimension(ensemble: FeatureEnsemble, eps: float, rtol: float = 1e-8,
                        max_iter: int = 500) -> float:
    """inf over lambda > 0 of K(lambda) subject to lambda K(lambda) <= eps^2."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if eps == 0:
        return float(ensemble.max_rank())
    target = eps * eps
    if ensemble.max_trace() <= target:
        return 0.0  # every lambda is admissible and K(lambda) -> 0
    f = lambda lam: lam * ensemble.trace_ratio(lam)
    lo = target / max(ensemble.dim, 1)  # lambda K(lambda) <= lambda * dim
    hi = max(target, 1.0)
    while f(hi) <= target:
        hi *= 2.0
    for _ in range(max_iter):
        if hi - lo <= rtol * hi:
            return ensemble.trace_ratio(lo)
        mid = math.sqrt(lo * hi) if lo > 0 else 0.5 * hi
        if f(mid) <= target:
            lo = mid
        else:
            hi = mid
    raise BisectionError(f"bisection did not converge; bracket [{lo!r}, {hi!r}]")


# --- occupancies and model tables ----------------------------------------------

class ClassTables:
    """Per-model plans, Bellman errors, losses and occupancies in the true env."""

    def __init__(self, env, model_class: FiniteModelClass):
        if isinstance(env, KnrEnv):
            raise TypeError("exact tables need an enumerable environment")
        self.env = env.to_tabular()
        self.model_class = model_class
        tab = self.env
        self.star = plan(tab)
        self.v_star = self.star.root_values
        self.policies = model_class.policy_tables()  # (N, C, H, S, A)
        self.bellman = np.stack([bellman_error_table(p, tab) for p in model_class.plans])
        losses = [tabular_loss_tables(m, tab) for m in model_class.models]
        self.loss = np.stack([l for l, _ in losses])
        self.kl_loss = np.stack([k for _, k in losses])
        N, C = len(model_class), tab.num_contexts
        self.occ = np.stack([np.stack([state_action_occupancy(tab, self.policies[i], c)
                                       for c in range(C)]) for i in range(N)])  # (N, C, H, S, A)
        self.values = np.array([[exact_policy_value(tab, self.policies[i], c) for c in range(C)]
                                for i in range(N)])  # V^{pi_M}(c) in the true env
        self.model_values = model_class.root_values  # V_M(c)

    def state_occ(self, level: int) -> np.ndarray:
        return self.occ[:, :, level].sum(axis=-1)  # (N, C, S)

    def data_distribution(self, gen: PolicyGenerator, p: np.ndarray, c: int, level: int) -> np.ndarray:
        """Law of (x^h, a^h) under pi_gen(h, p) in context c, shape (S, A)."""
        kind = gen.kind
        if kind is GeneratorKind.QTYPE:
            return np.tensordot(p, self.occ[:, c, level], axes=1)
        states = np.tensordot(p, self.state_occ(level)[:, c], axes=1)  # (S,)
        A = self.env.num_actions
        if kind is GeneratorKind.V_UNIFORM:
            act = np.full((len(states), A), 1.0 / A)
        elif kind is GeneratorKind.V_DOUBLE:
            act = np.tensordot(p, self.policies[:, c, level], axes=1)  # (S, A)
        else:
            act = np.stack([gen.design(c, level, s) for s in range(len(states))])
        return states[:, None] * act


# --- simulation lemma ---------------------------------------------------------

def simulation_lemma_check(env, model_class: FiniteModelClass, p, tables: Optional[ClassTables] = None) -> float:
    """max over contexts of |E_p[V* - V^{pi_M}] - E_p[sum_h E_{pi_M} E_B - Delta V_M]|."""
    tb = tables or ClassTables(env, model_class)
    p = np.asarray(p, float)
    lhs = p @ (tb.v_star[None, :] - tb.values)
    bell = np.sum(tb.occ * tb.bellman, axis=(2, 3, 4))  # (N, C)
    rhs = p @ (bell - (tb.model_values - tb.v_star[None, :]))
    return float(np.max(np.abs(lhs - rhs)))


# --- decoupling ----------------------------------------------------------------

@dataclass(frozen=True)
class DecouplingReport:
    level: int
    alpha: float
    eps: float
    coefficient: float
    witness: Optional[tuple]   # (grid index, context)
    witness_lhs: float
    witness_loss: float
    label: str = "grid lower bound"

    def as_dict(self) -> dict:
        return {"level": self.level, "alpha": self.alpha, "eps": self.eps,
                "coefficient": self.coefficient, "witness": self.witness,
                "witness_lhs": self.witness_lhs, "witness_loss": self.witness_loss,
                "label": self.label}


def empirical_decoupling(env, model_class: FiniteModelClass, gen: PolicyGenerator, level: int,
                         alpha: float, eps: float, p_grid: Sequence[np.ndarray],
                         tables: Optional[ClassTables] = None) -> DecouplingReport:
    """Smallest c making the decoupling inequality hold at every grid point and context."""
    tb = tables or ClassTables(env, model_class)
    best, witness, w_lhs, w_loss = 0.0, None, 0.0, 0.0
    for gi, p in enumerate(p_grid):
        p = np.asarray(p, float)
        for c in range(tb.env.num_contexts):
            lhs = float(p @ np.sum(tb.occ[:, c, level] * tb.bellman[:, c, level], axis=(1, 2)))
            data = tb.data_distribution(gen, p, c, level)
            loss = float(p @ np.sum(data[None] * tb.loss[:, c, level], axis=(1, 2)))
            excess = max(lhs - eps, 0.0)
            if excess == 0.0:
                coef = 0.0
            elif loss <= 0.0:
                coef = math.inf
            else:
                coef = excess ** (1.0 / alpha) / loss
            if coef > best or witness is None:
                best, witness, w_lhs, w_loss = coef, (gi, c), lhs, loss
    return DecouplingReport(level, alpha, eps, best, witness, w_lhs, w_loss)


def aggregate_dc(per_level: Sequence[float], alpha: float) -> float:
    """(1/H sum_h dc_h^{a/(1-a)})^{(1-a)/a}."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    e = alpha / (1 - alpha)
    vals = np.asarray(per_level, float)
    return float(np.mean(vals ** e) ** (1 / e))


def witness_ensemble(tables: ClassTables, level: int, p_grid) -> FeatureEnsemble:
    """psi^h(M, x^1) = state occupancy at ``level`` under pi_M; one group per (p, x^1)."""
    occ = tables.state_occ(level)  # (N, C, S)
    groups = [(occ[:, c], np.asarray(p, float)) for p in p_grid for c in range(occ.shape[1])]
    return FeatureEnsemble.from_groups(groups)


def witness_scale(tables: ClassTables, level: int) -> float:
    """B1 = max ||u^h(M, x^1)||, u[s] = E_B(M, s, pi_M(s)) at ``level``."""
    pol = tables.policies[:, :, level]                      # (N, C, S, A)
    u = np.sum(pol * tables.bellman[:, :, level], axis=-1)  # (N, C, S)
    return float(np.max(np.linalg.norm(u, axis=-1)))


def qtype_ensemble(tables: ClassTables, level: int, p_grid) -> FeatureEnsemble:
    """psi(x, a) = e_a at each fixed state; Sigma_Q(p, x) = E_p E_{a~pi_M(x)} e_a e_a^T."""
    pol = tables.policies[:, :, level]  # (N, C, S, A)
    groups = []
    for p in p_grid:
        for c in range(pol.shape[1]):
            for s in range(pol.shape[2]):
                groups.append((pol[:, c, s], np.asarray(p, float)))
    return FeatureEnsemble.from_groups(groups)


def qtype_scale(tables: ClassTables, level: int) -> float:
    """Upper bound on sup_f ||u(M, f)||: |Delta R| + TV at every (x, a)."""
    tab = tables.env
    out = 0.0
    for m in tables.model_class.models:
        gap = np.abs(m.reward_means[:, level] - tab.reward_means[:, level])
        tvd = 0.5 * np.abs(m.transitions[:, level] - tab.transitions[:, level]).sum(-1)
        out = max(out, float(np.max(np.linalg.norm((gap + tvd).reshape(gap.shape[0], -1), axis=1))))
    return out


@dataclass(frozen=True)
class Ceiling:
    value: float
    d_eff: float
    kappa: float
    scale: float
    factor: float

    def as_dict(self) -> dict:
        return {"value": self.value, "d_eff": self.d_eff, "kappa": self.kappa,
                "B1": self.scale, "factor": self.factor}


def decoupling_ceiling(tables: ClassTables, gen: PolicyGenerator, level: int, eps: float,
                       p_grid, kappa: float = 1.0) -> Ceiling:
    """Analytic alpha = 0.5 ceiling for the grid.

    Uniform: 4K/kappa^2 d_eff(psi, kappa eps/B1); design: 4 d(phi)/kappa^2 d_eff;
    Q-type: 4/kappa^2 d_eff(psi_Q, kappa eps/B1).
    """
    kind = gen.kind
    if kind is GeneratorKind.QTYPE:
        ens, scale, factor = qtype_ensemble(tables, level, p_grid), qtype_scale(tables, level), 4.0
    else:
        ens, scale = witness_ensemble(tables, level, p_grid), witness_scale(tables, level)
        if kind is GeneratorKind.V_UNIFORM:
            factor = 4.0 * tables.env.num_actions
        elif kind is GeneratorKind.V_DESIGN:
            dims = [np.linalg.matrix_rank(gen.feature_map(c, level, s))
                    for c in range(tables.env.num_contexts) for s in range(tables.env.num_states)]
            factor = 4.0 * max(dims)
        else:
            raise ValueError("no alpha = 0.5 ceiling for the double-sample generator")
    radius = kappa * eps / scale if scale > 0 else math.inf
    d_eff = effective_dimension(ens, radius) if math.isfinite(radius) else 0.0
    return Ceiling(factor * d_eff / kappa ** 2, d_eff, kappa, scale, factor)


def knr_ceiling(env: KnrEnv, model_class: FiniteModelClass, p_grid, eps: float,
                rollout_budget: int = 32) -> Ceiling:
    """Q-type ceiling 4/kappa^2 d_eff(phi, kappa eps/B1) with kappa = sigma.

    Sigma_Q(p, x) is formed at the probe states with each model's planned action;
    B1 is the largest ||W_M - W*||_2 (the sup over unit test vectors v).
    """
    from .planner import knr_plan
    acts = [knr_plan(m, env, rollout_budget, np.random.default_rng(0)) for m in model_class.models]
    groups = []
    for p in p_grid:
        for x in env.probe_states:
            vecs = np.stack([env.features(x, act(0, x)) for act in acts])
            groups.append((vecs, np.asarray(p, float)))
    ens = FeatureEnsemble.from_groups(groups)
    kappa = env.kappa
    scale = max(float(np.linalg.norm(m.weight - env.true_weight, 2)) for m in model_class.models)
    radius = kappa * eps / scale if scale > 0 else math.inf
    d_eff = effective_dimension(ens, radius) if math.isfinite(radius) else 0.0
    return Ceiling(4.0 * d_eff / kappa ** 2, d_eff, kappa, scale, 4.0)


# --- prior mass and bounds ---------------------------------------------------

def class_radii(model_class: FiniteModelClass, env) -> np.ndarray:
    return np.array([model_kl_radius(m, env) for m in model_class.models])


def class_omega(model_class: FiniteModelClass, env, alpha: float) -> float:
    return omega(class_radii(model_class, env), model_class.prior_log_weights, alpha)


def online_learning_rhs(omega_value: float, gamma: float, T: int) -> float:
    return omega_value / gamma + 2.0 * gamma * T


def regret_bound_rhs(omega_value: float, gamma: float, T: int, H: int, eps: float,
                 alpha: float, dc_value: float) -> float:
    """omega/gamma + 2 gamma T + H T [eps + (1-a)(20 H gamma a)^{a/(1-a)} dc^{a/(1-a)}]."""
    if not 0 < gamma <= 0.5:
        raise ValueError("gamma must lie in (0, 0.5]")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1); the exponent a/(1-a) is undefined at 1")
    e = alpha / (1 - alpha)
    tail = eps + (1 - alpha) * (20 * H * gamma * alpha) ** e * dc_value ** e
    return omega_value / gamma + 2 * gamma * T + H * T * tail


def regret_bound_tuned(num_models: int, omega_value: float, T: int, H: int, eps: float,
                   alpha: float, dc_value: Optional[float] = None):
    """(gamma, rhs) with gamma = min(0.5, sqrt(ln|M|/T), (ln|M|/T)^{1-a} dc^{-a}/H)."""
    from .posterior import auto_gamma
    gamma = auto_gamma(num_models, T, alpha, dc_value, H)
    return gamma, regret_bound_rhs(omega_value, gamma, T, H, eps, alpha, dc_value or 0.0)


def standard_grid(num_models: int, snapshots: Sequence[np.ndarray] = ()) -> list:
    """Point masses, the uniform distribution and any posterior snapshots."""
    grid = [np.eye(num_models)[i] for i in range(num_models)]
    grid.append(np.full(num_models, 1.0 / num_models))
    grid.extend(np.asarray(s, float) for s in snapshots)
    return grid
