"""Probability distances and the per-step model losses built on them.

Squared Hellinger uses the unnormalized convention sum_z (sqrt p - sqrt q)^2,
so it ranges over [0, 2].
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import rel_entr

from .envs import KnrEnv

INF = math.inf


@dataclass(frozen=True)
class DiscreteDist:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probs must be a probability vector")
        object.__setattr__(self, "probs", p)


@dataclass(frozen=True)
class GaussianDist:
    mean: np.ndarray
    std: float

    def __post_init__(self):
        if self.std <= 0:
            raise ValueError("std must be positive")
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))


Dist = Union[DiscreteDist, GaussianDist]


def _as_dist(P) -> Dist:
    if isinstance(P, (DiscreteDist, GaussianDist)):
        return P
    return DiscreteDist(np.asarray(P, dtype=float))


def _pair(P, Q):
    P, Q = _as_dist(P), _as_dist(Q)
    if type(P) is not type(Q):
        raise ValueError("distributions are of different families")
    if isinstance(P, DiscreteDist):
        if P.probs.shape != Q.probs.shape:
            raise ValueError("supports differ")
    else:
        if P.mean.shape != Q.mean.shape:
            raise ValueError("Gaussian dimensions differ")
        if P.std != Q.std:
            raise ValueError("only equal isotropic variances are supported")
    return P, Q


def _mean_gap_sq(P: GaussianDist, Q: GaussianDist) -> float:
    return float(np.sum((P.mean - Q.mean) ** 2)) / P.std ** 2


def hellinger_sq(P, Q) -> float:
    P, Q = _pair(P, Q)
    if isinstance(P, GaussianDist):
        return 2.0 * -math.expm1(-_mean_gap_sq(P, Q) / 8.0)
    val = float(np.sum((np.sqrt(P.probs) - np.sqrt(Q.probs)) ** 2))
    return min(max(val, 0.0), 2.0)


def kl(P, Q) -> float:
    """KL(P || Q); ``inf`` when Q misses part of P's support."""
    P, Q = _pair(P, Q)
    if isinstance(P, GaussianDist):
        return 0.5 * _mean_gap_sq(P, Q)
    return float(np.sum(rel_entr(P.probs, Q.probs)))


def tv(P, Q) -> float:
    P, Q = _pair(P, Q)
    if isinstance(P, GaussianDist):
        return math.erf(math.sqrt(_mean_gap_sq(P, Q)) / (2.0 * math.sqrt(2.0)))
    return 0.5 * float(np.sum(np.abs(P.probs - Q.probs)))


def _true_reward(env, level, x, a):
    if isinstance(env, KnrEnv):
        return env.reward(x, a)
    c, s = x
    return env.to_tabular().reward_means[c, level, s, a]


def _conditionals(model, env, x, a, level):
    if isinstance(env, KnrEnv):
        sigma = env.noise_std
        return (GaussianDist(model.mean_next(x, a), sigma),
                GaussianDist(env.mean_next(env.true_weight, x, a), sigma))
    c, s = x
    tab = env.to_tabular()
    return (DiscreteDist(model.transitions[c, level, s, a]),
            DiscreteDist(tab.transitions[c, level, s, a]))


def step_loss(model, env, x, a, level: int) -> float:
    """Squared Hellinger of next-state laws plus squared mean-reward gap.

    ``x`` is ``(context, state)`` for tabular environments and a state vector
    for KNR.
    """
    P_model, P_true = _conditionals(model, env, x, a, level)
    gap = model.mean_reward(level, x, a) - _true_reward(env, level, x, a)
    return hellinger_sq(P_model, P_true) + gap ** 2


def kl_step_loss(model, env, x, a, level: int) -> float:
    P_model, P_true = _conditionals(model, env, x, a, level)
    gap = model.mean_reward(level, x, a) - _true_reward(env, level, x, a)
    return kl(P_true, P_model) + gap ** 2


def tabular_loss_tables(model, env):
    """Vectorized ``(step_loss, kl_step_loss)`` over all ``(c, level, s, a)``."""
    tab = env.to_tabular()
    Pm, Ps = model.transitions, tab.transitions
    hel = np.sum((np.sqrt(Pm) - np.sqrt(Ps)) ** 2, axis=-1)
    kld = np.sum(rel_entr(Ps, Pm), axis=-1)
    gap2 = (model.reward_means - tab.reward_means) ** 2
    return hel + gap2, kld + gap2


def model_kl_radius(model, env) -> float:
    """sup over contexts, levels, states and actions of the KL step loss.

    Unreachable states are included in the sup.
    """
    if isinstance(env, KnrEnv):
        radius = 0.0
        for x in env.probe_states:
            for a in range(env.num_actions):
                radius = max(radius, kl_step_loss(model, env, x, a, 0))
        return radius
    _, kl_table = tabular_loss_tables(model, env)
    return float(np.max(kl_table))


def omega(radii, prior_log_weights, alpha: float) -> float:
    """Prior-mass functional inf_eps [alpha * eps - ln p0({M : r(M) <= eps^2})].

    ``radii`` are the per-model worst-case KL step losses r(M) (``inf`` allowed).
    The prior mass is a step function of eps, so the infimum is attained (or
    approached from the right when r = 0) at eps = sqrt(r_k) for some model k.
    """
    r = np.asarray(radii, dtype=float)
    logp = np.asarray(prior_log_weights, dtype=float)
    if r.size == 0:
        raise ValueError("empty model class")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    logp = logp - np.logaddexp.reduce(logp)
    finite = np.isfinite(r)
    if not finite.any():
        return INF
    order = np.argsort(r[finite], kind="stable")
    rs = r[finite][order]
    cum = np.logaddexp.accumulate(logp[finite][order])
    best = INF
    for k in range(len(rs)):
        # ties share the full mass of the tied block
        if k + 1 < len(rs) and rs[k + 1] == rs[k]:
            continue
        best = min(best, alpha * math.sqrt(rs[k]) - cum[k])
    return float(best)
