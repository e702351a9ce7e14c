"""The MOPS main loop, its regret ledger and online-to-batch conversion."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .divergences import tabular_loss_tables
from .envs import KnrEnv, exact_policy_value, rollout, sample_context
from .generators import GeneratedPolicy, GeneratorKind, PolicyGenerator, generate
from .planner import plan
from .posterior import (DEFAULT_ETA, FiniteModelClass, LogPosterior, TransitionRecord,
                        auto_gamma, batch_posterior, update)

RECOMPUTE_EVERY = 1000
DRIFT_TOL = 1e-8

TRACE_COLUMNS = ["t", "h_t", "context", "realized_regret", "expected_model_value",
                 "optimism_term", "step_loss", "posterior_entropy", "posterior_mass_true",
                 "context_avg_regret"]


@dataclass(frozen=True)
class Hyperparams:
    eta: float = DEFAULT_ETA
    eta_prime: float = DEFAULT_ETA
    gamma: object = "auto"
    full_horizon: bool = False
    knr_budget: int = 32

    def resolve_gamma(self, num_models: int, T: int) -> float:
        if self.gamma == "auto":
            return auto_gamma(num_models, T)
        return float(self.gamma)


@dataclass
class RegretLedger:
    """Per-round quantities; every array has length T."""
    h_t: np.ndarray
    context: np.ndarray
    realized_regret: np.ndarray      # V*(x_t) - V^{pi_t}(x_t)
    context_avg_regret: np.ndarray   # same, averaged over the context distribution
    v_star: np.ndarray               # V*(x_t)
    expected_model_value: np.ndarray  # E_{M~p_t} V_M(x_t)
    step_loss: np.ndarray            # E_{M~p_t} l^{h_t}(M, x_t^{h_t}, a_t^{h_t})
    posterior_entropy: np.ndarray
    posterior_mass_true: np.ndarray

    @property
    def T(self) -> int:
        return len(self.h_t)

    @property
    def optimism_term(self) -> np.ndarray:
        """E_{M~p_t}[Delta V_M(x_t)] with Delta V_M = V_M - V*."""
        return self.expected_model_value - self.v_star

    @property
    def model_regret(self) -> np.ndarray:
        """V*(x_t) - E_{M~p_t} V_M(x_t), the quantity the regret bound controls."""
        return -self.optimism_term

    def online_learning_lhs(self, eta: float, gamma: float) -> float:
        """sum_t E_{p_t}[0.3 eta/gamma l^{h_t} - Delta V_M(x_t)]."""
        return float(np.sum(0.3 * eta / gamma * self.step_loss - self.optimism_term))

    def rows(self):
        for t in range(self.T):
            yield [t + 1, int(self.h_t[t]), int(self.context[t]), self.realized_regret[t],
                   self.expected_model_value[t], self.optimism_term[t], self.step_loss[t],
                   self.posterior_entropy[t], self.posterior_mass_true[t],
                   self.context_avg_regret[t]]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for row in self.rows():
                w.writerow([x if isinstance(x, int) else repr(float(x)) for x in row])


@dataclass
class RunResult:
    policies: List[GeneratedPolicy]
    ledger: RegretLedger
    posterior: LogPosterior
    rounds: list                      # records per round (S_T grouped by round)
    posterior_trace: list             # (t, h_t, weights, root values at x_t)
    snapshots: dict = field(default_factory=dict)  # t -> weights
    gamma: float = 0.0
    max_drift: float = 0.0


def run_mops(env, model_class: FiniteModelClass, gen: PolicyGenerator, hyper: Hyperparams,
             T: int, rng: np.random.Generator, snapshot_every: Optional[int] = None,
             keep_trace: bool = True) -> RunResult:
    if T < 1:
        raise ValueError("T must be >= 1")
    gamma = hyper.resolve_gamma(len(model_class), T)
    knr = isinstance(env, KnrEnv)
    post = LogPosterior.from_prior(model_class, hyper.eta, hyper.eta_prime, gamma)
    H = env.horizon
    N = len(model_class)
    true_idx = model_class.true_index

    if knr:
        loss_tables = None
        v_star = None
    else:
        star = plan(env.to_tabular())
        v_star = star.root_values
        loss_tables = np.stack([tabular_loss_tables(m, env)[0] for m in model_class.models])
        ctx_dist = env.to_tabular().context_dist

    cols = {k: np.empty(T) for k in ("h_t", "context", "realized", "ctx_avg", "vstar",
                                     "emv", "loss", "ent", "mass")}
    policies, rounds, trace, snapshots = [], [], [], {}
    max_drift = 0.0

    for t in range(1, T + 1):
        c = sample_context(env, rng)
        h_t = int(rng.integers(1, H + 1))
        w = post.weights
        pol = generate(gen, h_t, post, model_class, rng, env)
        steps = H if hyper.full_horizon else h_t
        traj = rollout(env, pol.executable, c, steps, rng)
        recs = [TransitionRecord(t, h_t, c, st.level, st.state, st.action, st.reward, st.next_state)
                for st in traj.steps]
        main = recs[h_t - 1]
        others = [r for r in recs if r is not main] if hyper.full_horizon else []

        cols["h_t"][t - 1] = h_t
        cols["context"][t - 1] = c
        cols["emv"][t - 1] = float(w @ model_class.root_values[:, c])
        cols["ent"][t - 1] = post.entropy()
        cols["mass"][t - 1] = w[true_idx] if true_idx is not None else math.nan
        if knr:
            per_model = model_class.knr_step_losses(main.state, main.action)
            cols["loss"][t - 1] = float(w @ per_model)
            cols["realized"][t - 1] = math.nan
            cols["ctx_avg"][t - 1] = math.nan
            cols["vstar"][t - 1] = (model_class.root_values[true_idx, 0]
                                    if true_idx is not None else math.nan)
        else:
            cols["loss"][t - 1] = float(w @ loss_tables[:, c, main.level, main.state, main.action])
            vals = np.array([exact_policy_value(env, pol.table, cc) for cc in range(len(v_star))])
            cols["realized"][t - 1] = v_star[c] - vals[c]
            cols["ctx_avg"][t - 1] = float(ctx_dist @ (v_star - vals))
            cols["vstar"][t - 1] = v_star[c]

        if keep_trace:
            trace.append((t, h_t, w, model_class.root_values[:, c]))
        policies.append(pol)
        rounds.append([main] + others)
        post = update(post, model_class, main, others)

        if t % RECOMPUTE_EVERY == 0:
            fresh = batch_posterior(model_class, rounds, hyper.eta, hyper.eta_prime, gamma)
            finite = np.isfinite(fresh.log_weights)
            if not np.array_equal(finite, np.isfinite(post.log_weights)):
                raise RuntimeError("support of incremental and batch posteriors differ")
            drift = float(np.max(np.abs(fresh.log_weights[finite] - post.log_weights[finite]),
                                 initial=0.0))
            if drift > DRIFT_TOL:
                raise RuntimeError(f"posterior drift {drift:.3e} exceeds {DRIFT_TOL}")
            max_drift = max(max_drift, drift)
            post = fresh
        if snapshot_every and t % snapshot_every == 0:
            snapshots[t] = post.weights

    ledger = RegretLedger(cols["h_t"].astype(int), cols["context"].astype(int), cols["realized"],
                          cols["ctx_avg"], cols["vstar"], cols["emv"], cols["loss"], cols["ent"],
                          cols["mass"])
    return RunResult(policies, ledger, post, rounds, trace, snapshots, gamma, max_drift)


@dataclass(frozen=True)
class BatchValue:
    value: float
    stderr: float = 0.0
    exact: bool = True


def online_to_batch(policies, env, rng: Optional[np.random.Generator] = None,
                    num_episodes: int = 2000) -> BatchValue:
    """Value of the uniform mixture over ``policies``, averaged over contexts.

    Exact for enumerable environments; for KNR a Monte Carlo estimate with its
    standard error.
    """
    if len(policies) == 0:
        raise ValueError("no policies")
    tables = [p.executable if isinstance(p, GeneratedPolicy) else p for p in policies]
    if isinstance(env, KnrEnv):
        if rng is None:
            raise ValueError("a generator is needed for the sampled estimate")
        returns = np.empty(num_episodes)
        for i in range(num_episodes):
            act = tables[int(rng.integers(len(tables)))]
            traj = rollout(env, act, 0, env.horizon, rng)
            returns[i] = sum(st.reward for st in traj.steps)
        return BatchValue(float(returns.mean()), float(returns.std(ddof=1) / math.sqrt(num_episodes)), False)
    D = env.to_tabular().context_dist
    vals = [sum(D[c] * exact_policy_value(env, tab, c) for c in range(len(D))) for tab in tables]
    return BatchValue(float(np.mean(vals)))
