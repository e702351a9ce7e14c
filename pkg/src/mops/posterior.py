"""Finite model classes and the optimistic log-space posterior."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .envs import KnrEnv
from .planner import KnrModel, PlanResult, TabularModel, knr_root_value, plan

DEFAULT_ETA = 1.0 / 6.0


class PosteriorCollapse(RuntimeError):
    """Every model has been eliminated (impossible under realizability)."""


@dataclass(frozen=True)
class TransitionRecord:
    t: int
    h_t: int          # number of steps played that round (1-based)
    context: int
    level: int        # 0-based level of this tuple
    state: object
    action: int
    reward: float
    next_state: object

    @property
    def x(self):
        return self.state


def auto_gamma(num_models: int, T: int, alpha: Optional[float] = None,
               dc: Optional[float] = None, horizon: Optional[int] = None) -> float:
    """gamma = min(0.5, sqrt(ln|M|/T), (ln|M|/T)^(1-alpha) dc^(-alpha) / H).

    The third term is only used when a decoupling estimate is supplied.
    """
    ratio = math.log(num_models) / T
    gamma = min(0.5, math.sqrt(ratio))
    if dc is not None and alpha is not None and dc > 0:
        gamma = min(gamma, ratio ** (1 - alpha) * dc ** (-alpha) / horizon)
    if gamma <= 0:
        # a singleton class has ln|M| = 0; any positive gamma is harmless there
        gamma = 0.5
    return gamma


@dataclass
class FiniteModelClass:
    models: list
    prior_log_weights: np.ndarray
    true_index: Optional[int] = None  # analysis only, never read by the learner
    plans: Optional[list] = None
    root_values: np.ndarray = field(default=None)  # (num_models, num_contexts)

    def __post_init__(self):
        if len(self.models) == 0:
            raise ValueError("empty model class")
        lp = np.asarray(self.prior_log_weights, dtype=float)
        if lp.shape != (len(self.models),):
            raise ValueError("one prior log-weight per model required")
        self.prior_log_weights = lp - logsumexp(lp)
        self._stack = None

    def __len__(self) -> int:
        return len(self.models)

    @property
    def prior(self) -> np.ndarray:
        return np.exp(self.prior_log_weights)

    @classmethod
    def tabular(cls, models: Sequence[TabularModel], initial_states, prior_log_weights=None,
                true_index=None) -> "FiniteModelClass":
        lp = (np.zeros(len(models)) if prior_log_weights is None else prior_log_weights)
        plans = [plan(m, initial_states) for m in models]
        roots = np.stack([p.root_values for p in plans])
        return cls(list(models), lp, true_index, plans, roots)

    @classmethod
    def knr(cls, weights: Sequence[np.ndarray], env: KnrEnv, prior_log_weights=None,
            true_index=None, rollout_budget: int = 64) -> "FiniteModelClass":
        models = [KnrModel(np.asarray(W, float), env) for W in weights]
        lp = np.zeros(len(models)) if prior_log_weights is None else prior_log_weights
        roots = np.array([[knr_root_value(m, rollout_budget)] for m in models])
        return cls(models, lp, true_index, None, roots)

    @property
    def is_tabular(self) -> bool:
        return isinstance(self.models[0], TabularModel)

    def realizable_index(self, env) -> Optional[int]:
        for i, m in enumerate(self.models):
            if m.same_as(env):
                return i
        return None

    def policy_tables(self) -> np.ndarray:
        """One-hot greedy policies, shape ``(N, C, H, S, A)``."""
        return np.stack([p.policy_table() for p in self.plans])

    def _tabular_stack(self):
        if self._stack is None:
            with np.errstate(divide="ignore"):
                logP = np.log(np.stack([m.transitions for m in self.models]))
            R = np.stack([m.reward_means for m in self.models])
            self._stack = (logP, R)
        return self._stack

    def likelihood_terms(self, record: TransitionRecord, eta: float, eta_prime: float) -> np.ndarray:
        """likelihood_term for every model at once."""
        if self.is_tabular:
            logP, R = self._tabular_stack()
            c, lvl, s, a = record.context, record.level, record.state, record.action
            return -eta * (R[:, c, lvl, s, a] - record.reward) ** 2 + eta_prime * logP[:, c, lvl, s, a, record.next_state]
        env = self.models[0].env
        phi = env.features(record.state, record.action)
        resid = np.asarray(record.next_state, float)[None, :] - self._knr_weights() @ phi
        sigma = env.noise_std
        d = resid.shape[1]
        logp = -0.5 * np.sum(resid * resid, axis=1) / sigma ** 2 - 0.5 * d * math.log(2 * math.pi * sigma ** 2)
        gap = env.reward(record.state, record.action) - record.reward
        return -eta * gap ** 2 + eta_prime * logp

    def _knr_weights(self) -> np.ndarray:
        if self._stack is None:
            self._stack = np.stack([m.weight for m in self.models])  # (N, d_x, d_phi)
        return self._stack

    def knr_step_losses(self, state, action: int) -> np.ndarray:
        """Squared Hellinger between each model's next-state Gaussian and the truth.

        Rewards are known in KNR so the reward gap vanishes.
        """
        env = self.models[0].env
        phi = env.features(state, action)
        diff = (self._knr_weights() - env.true_weight[None]) @ phi
        return 2.0 * -np.expm1(-np.sum(diff * diff, axis=1) / (8.0 * env.noise_std ** 2))


def likelihood_term(model, record: TransitionRecord, eta: float, eta_prime: float) -> float:
    """-eta (R_M(x, a) - r)^2 + eta' ln P_M(x' | x, a); ``-inf`` eliminates the model."""
    x = (record.context, record.state) if isinstance(model, TabularModel) else record.state
    gap = model.mean_reward(record.level, x, record.action) - record.reward
    logp = model.log_prob(record.level, x, record.action, record.next_state)
    if logp == -math.inf:
        return -math.inf
    return -eta * gap ** 2 + eta_prime * logp


@dataclass(frozen=True)
class LogPosterior:
    log_weights: np.ndarray
    t: int = 0
    eta: float = DEFAULT_ETA
    eta_prime: float = DEFAULT_ETA
    gamma: float = 0.5

    @classmethod
    def from_prior(cls, model_class: FiniteModelClass, eta=DEFAULT_ETA,
                   eta_prime=DEFAULT_ETA, gamma=0.5) -> "LogPosterior":
        return cls(model_class.prior_log_weights.copy(), 0, eta, eta_prime, gamma)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def entropy(self) -> float:
        w = self.weights
        nz = w > 0
        return float(-np.sum(w[nz] * self.log_weights[nz]))


def _normalize(log_w: np.ndarray) -> np.ndarray:
    z = logsumexp(log_w)
    if not np.isfinite(z):
        raise PosteriorCollapse("all posterior weights are zero")
    return log_w - z


def round_exponent(model_class: FiniteModelClass, record: TransitionRecord,
                   eta: float, eta_prime: float, gamma: float) -> np.ndarray:
    """gamma V_M(x_s^1) + L_s(M) for one round."""
    return gamma * model_class.root_values[:, record.context] + \
        model_class.likelihood_terms(record, eta, eta_prime)


def update(posterior: LogPosterior, model_class: FiniteModelClass,
           record: TransitionRecord, extra_records: Sequence[TransitionRecord] = ()) -> LogPosterior:
    """Fold one round into the posterior.

    The optimism term enters once per round; ``extra_records`` carries the
    other tuples of a round when full trajectories are kept.
    """
    g = posterior.gamma
    incr = round_exponent(model_class, record, posterior.eta, posterior.eta_prime, g)
    for extra in extra_records:
        incr = incr + model_class.likelihood_terms(extra, posterior.eta, posterior.eta_prime)
    log_w = _normalize(posterior.log_weights + incr)
    return replace(posterior, log_weights=log_w, t=posterior.t + 1)


def batch_posterior(model_class: FiniteModelClass, rounds: Sequence[Sequence[TransitionRecord]],
                    eta=DEFAULT_ETA, eta_prime=DEFAULT_ETA, gamma=0.5) -> LogPosterior:
    """Posterior recomputed from scratch; ``rounds[s]`` lists the tuples of round s
    with the round's optimism carried by its first tuple."""
    total = model_class.prior_log_weights.copy()
    for recs in rounds:
        total = total + gamma * model_class.root_values[:, recs[0].context]
        for rec in recs:
            total = total + model_class.likelihood_terms(rec, eta, eta_prime)
    return LogPosterior(_normalize(total), len(rounds), eta, eta_prime, gamma)


def sample_model(posterior: LogPosterior, rng: np.random.Generator) -> int:
    w = posterior.weights
    if np.count_nonzero(w) == 1:
        return int(np.flatnonzero(w)[0])
    return int(rng.choice(len(w), p=w / w.sum()))


def write_posterior_trace(path, rows) -> None:
    """Rows: (t, h_t, weights, root values at x_t^1)."""
    rows = list(rows)
    n = len(rows[0][2]) if rows else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "h_t"] + [f"w_{i}" for i in range(n)] + [f"v_{i}" for i in range(n)])
        for t, h_t, weights, values in rows:
            w.writerow([t, h_t] + [repr(float(x)) for x in weights] + [repr(float(x)) for x in values])
