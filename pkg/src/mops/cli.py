"""Command line: ``mops run|check|gen``.

Configs are JSON files mirroring :class:`ExperimentConfig`.  Outputs are
per-seed CSV traces, a JSON summary (``schema_version`` 1) and two-column
plot-data files with gnuplot-style ``#`` headers.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import analysis as an
from .driver import Hyperparams, run_mops
from .generators import GeneratorKind, PolicyGenerator
from .instances import (FAMILIES, SCHEMA_VERSION, Instance, InstanceError, generate,
                        load_instance, random_tabular_triple, save_instance)
from .planner import bellman_error_table, plan
from .posterior import DEFAULT_ETA, write_posterior_trace

SIM_LEMMA_TOL = 1e-9
BELLMAN_TOL = 1e-12
DRIFT_TOL = 1e-8


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


# --- configuration ------------------------------------------------------------

@dataclass
class InstanceSpec:
    family: str = "tabular"
    seed: int = 0
    dims: dict = field(default_factory=dict)
    path: Optional[str] = None   # load a saved instance instead of generating one


@dataclass
class ClassSpec:
    size: Optional[int] = None
    perturbation: Optional[float] = None
    include_true: bool = True
    misspecified_ok: bool = False  # explicit opt-out of realizability


@dataclass
class AlgorithmSpec:
    generator: str = "v_uniform"
    eta: float = DEFAULT_ETA
    eta_prime: float = DEFAULT_ETA
    gamma: Union[float, str] = "auto"
    T: int = 2000
    full_horizon: bool = False
    knr_budget: int = 32


@dataclass
class ReplicationSpec:
    num_seeds: int = 1
    base_seed: int = 0
    workers: int = 1


@dataclass
class AnalysisSpec:
    alpha: float = 0.5
    eps: float = 0.0
    snapshot_every: int = 200
    sim_lemma_trials: int = 100
    eps_grid: list = field(default_factory=lambda: [0.0, 0.01, 0.03, 0.1, 0.3, 1.0])


@dataclass
class OutputSpec:
    dir: str = "runs/out"


@dataclass
class ExperimentConfig:
    instance: InstanceSpec = field(default_factory=InstanceSpec)
    model_class: ClassSpec = field(default_factory=ClassSpec)
    algorithm: AlgorithmSpec = field(default_factory=AlgorithmSpec)
    replication: ReplicationSpec = field(default_factory=ReplicationSpec)
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    def validate(self) -> "ExperimentConfig":
        inst, alg, rep, ana = self.instance, self.algorithm, self.replication, self.analysis
        if inst.family not in FAMILIES:
            raise ConfigError(f"instance.family: expected one of {FAMILIES}, got {inst.family!r}")
        if alg.generator not in {k.value for k in GeneratorKind}:
            raise ConfigError(f"algorithm.generator: unknown kind {alg.generator!r}")
        if alg.T < 1:
            raise ConfigError("algorithm.T: must be >= 1")
        if alg.eta <= 0 or alg.eta_prime <= 0:
            raise ConfigError("algorithm.eta: learning rates must be positive")
        if alg.gamma != "auto":
            if isinstance(alg.gamma, str) or not 0 < alg.gamma <= 0.5:
                raise ConfigError("algorithm.gamma: must be 'auto' or a number in (0, 0.5]")
        if rep.num_seeds < 1:
            raise ConfigError("replication.num_seeds: must be >= 1")
        if rep.workers < 1:
            raise ConfigError("replication.workers: must be >= 1")
        if not 0 < ana.alpha < 1:
            raise ConfigError("analysis.alpha: must lie in (0, 1)")
        if ana.eps < 0:
            raise ConfigError("analysis.eps: must be nonnegative")
        if not self.model_class.include_true and not self.model_class.misspecified_ok:
            raise ConfigError("model_class.include_true: realizability requires the true model "
                              "(set misspecified_ok to run an unsupported experiment)")
        return self


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown field")
    kwargs = {}
    for name, value in data.items():
        kwargs[name] = _coerce(value, known[name], f"{path}.{name}")
    return cls(**kwargs)


def _coerce(value, f: dataclasses.Field, path: str):
    t = str(f.type)
    if "Union[float, str]" in t:
        if value == "auto" or (isinstance(value, (int, float)) and not isinstance(value, bool)):
            return value
        raise ConfigError(f"{path}: expected a number or 'auto'")
    if t.startswith("Optional"):
        if value is None:
            return None
        t = t[len("Optional["):-1]
    checks = {"int": lambda v: isinstance(v, int) and not isinstance(v, bool),
              "float": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
              "bool": lambda v: isinstance(v, bool),
              "str": lambda v: isinstance(v, str),
              "dict": lambda v: isinstance(v, dict),
              "list": lambda v: isinstance(v, list)}
    if t in checks and not checks[t](value):
        raise ConfigError(f"{path}: expected {t}, got {type(value).__name__}")
    return float(value) if t == "float" else value


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: expected an object")
    sections = {}
    types = {"instance": InstanceSpec, "model_class": ClassSpec, "algorithm": AlgorithmSpec,
             "replication": ReplicationSpec, "analysis": AnalysisSpec, "output": OutputSpec}
    for key, value in data.items():
        if key not in types:
            raise ConfigError(f"{key}: unknown section")
        sections[key] = _build(types[key], value, key)
    return ExperimentConfig(**sections).validate()


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None
    return config_from_dict(data)


def build_instance(cfg: ExperimentConfig) -> Instance:
    spec = cfg.instance
    if spec.path:
        return load_instance(spec.path)
    dims = dict(spec.dims)
    cls = cfg.model_class
    if cls.size is not None:
        if spec.family == "mixture":
            raise ConfigError("model_class.size: the mixture class is fixed by dims.grid_step")
        dims["class_size"] = cls.size
    if cls.perturbation is not None:
        if spec.family != "tabular":
            raise ConfigError("model_class.perturbation: only used by the tabular family")
        dims["perturbation"] = cls.perturbation
    dims["include_true"] = cls.include_true
    try:
        return generate(spec.family, seed=spec.seed, **dims)
    except InstanceError as exc:
        raise ConfigError(f"instance.dims: {exc}") from None


@dataclass(frozen=True)
class OneHotActions:
    """Action indicator features for the design generator on tabular families."""
    num_actions: int

    def __call__(self, context, level, state) -> np.ndarray:
        return np.eye(self.num_actions)


def _feature_map(inst: Instance):
    return OneHotActions(inst.env.num_actions)


def make_generator(cfg: ExperimentConfig, inst: Instance) -> PolicyGenerator:
    kind = GeneratorKind(cfg.algorithm.generator)
    fmap = _feature_map(inst) if kind is GeneratorKind.V_DESIGN else None
    return PolicyGenerator(kind, fmap, cfg.algorithm.knr_budget)


def hyperparams(cfg: ExperimentConfig) -> Hyperparams:
    a = cfg.algorithm
    return Hyperparams(a.eta, a.eta_prime, a.gamma, a.full_horizon, a.knr_budget)


# --- running ---------------------------------------------------------------

@dataclass
class SeedOutcome:
    seed: int
    gamma: float
    online_lhs: float
    model_regret: np.ndarray      # per round
    realized_regret: np.ndarray   # per round (NaN for KNR)
    mass_true: np.ndarray         # per round, before the update
    final_mass_true: float
    max_drift: float
    snapshots: dict
    csv_rows: list
    trace_rows: list


def run_seed(cfg_dict: dict, seed_index: int) -> SeedOutcome:
    """One replicate; module-level so worker processes can import it."""
    cfg = config_from_dict(cfg_dict)
    inst = build_instance(cfg)
    mc = inst.model_class()
    rng = np.random.default_rng([cfg.replication.base_seed, seed_index])
    snap = cfg.analysis.snapshot_every if inst.family != "knr" else None
    res = run_mops(inst.env, mc, make_generator(cfg, inst), hyperparams(cfg), cfg.algorithm.T,
                   rng, snapshot_every=snap)
    L = res.ledger
    ti = mc.true_index
    final = float(res.posterior.weights[ti]) if ti is not None else math.nan
    return SeedOutcome(seed_index, res.gamma, L.online_learning_lhs(cfg.algorithm.eta, res.gamma),
                       L.model_regret, L.realized_regret, L.posterior_mass_true, final,
                       res.max_drift, res.snapshots, list(L.rows()), res.posterior_trace)


def run_all(cfg: ExperimentConfig) -> list:
    cfg_dict = config_to_dict(cfg)
    seeds = range(cfg.replication.num_seeds)
    if cfg.replication.workers > 1:
        with ProcessPoolExecutor(cfg.replication.workers) as pool:
            return list(pool.map(run_seed, [cfg_dict] * len(seeds), seeds))
    return [run_seed(cfg_dict, s) for s in seeds]


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)


def _margin_entry(name, value, threshold, passed=None, **extra) -> dict:
    ok = value <= threshold if passed is None else passed
    return dict(name=name, passed=bool(ok), value=float(value), threshold=float(threshold),
                margin=float(threshold - value), **extra)


def bound_verdicts(cfg: ExperimentConfig, inst: Instance, outcomes: list) -> list:
    """Seed-averaged online-learning and regret-bound checks."""
    mc = inst.model_class()
    T = cfg.algorithm.T
    H = inst.env.horizon
    gamma = outcomes[0].gamma
    checks = []
    if inst.family == "knr":
        return checks
    om = an.class_omega(mc, inst.env, 3 * H * T)
    lhs = float(np.mean([o.online_lhs for o in outcomes]))
    checks.append(_margin_entry("online_learning_ledger", lhs, an.online_learning_rhs(om, gamma, T),
                                seeds=len(outcomes), omega=om, gamma=gamma,
                                note="seed average stands in for the expectation"))
    tb = an.ClassTables(inst.env, mc)
    snaps = [w for o in outcomes[:3] for w in o.snapshots.values()]
    grid = an.standard_grid(len(mc), snaps)
    gen = make_generator(cfg, inst)
    alpha, eps = cfg.analysis.alpha, cfg.analysis.eps
    reports = [an.empirical_decoupling(inst.env, mc, gen, h, alpha, eps, grid, tb) for h in range(H)]
    dc = an.aggregate_dc([r.coefficient for r in reports], alpha)
    regret = float(np.mean([o.model_regret.sum() for o in outcomes]))
    rhs = an.regret_bound_rhs(om, gamma, T, H, eps, alpha, dc) if math.isfinite(dc) else math.inf
    checks.append(_margin_entry("regret_bound", regret, rhs, dc=dc, alpha=alpha, eps=eps,
                                per_level=[r.as_dict() for r in reports]))
    if alpha == 0.5 and gen.kind is not GeneratorKind.V_DOUBLE:
        for h, rep in enumerate(reports):
            ceil = an.decoupling_ceiling(tb, gen, h, eps, grid)
            checks.append(_margin_entry(f"decoupling_sandwich_level_{h + 1}", rep.coefficient,
                                        ceil.value, ceiling=ceil.as_dict(), label=rep.label))
    return checks


def summarize(cfg: ExperimentConfig, inst: Instance, outcomes: list) -> dict:
    checks = bound_verdicts(cfg, inst, outcomes)
    return {"schema_version": SCHEMA_VERSION, "config": config_to_dict(cfg),
            "num_seeds": len(outcomes), "gamma": outcomes[0].gamma,
            "true_index": inst.true_index,
            "cumulative_model_regret": float(np.mean([o.model_regret.sum() for o in outcomes])),
            "cumulative_realized_regret": float(np.mean([o.realized_regret.sum() for o in outcomes])),
            "final_mass_true": float(np.mean([o.final_mass_true for o in outcomes])),
            "max_posterior_drift": float(max(o.max_drift for o in outcomes)),
            "checks": checks}


def write_plot_data(path: Path, xlabel: str, ylabel: str, xs, ys) -> None:
    lines = [f"# {xlabel} {ylabel}"]
    lines += [f"{int(x)} {float(y)!r}" for x, y in zip(xs, ys)]
    path.write_text("\n".join(lines) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _finite(obj):
    """Replace NaN and infinities (not valid JSON) by None or a string tag."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        if math.isnan(obj):
            return None
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return float(obj)
    return obj


def dump_json(path: Path, obj) -> None:
    text = json.dumps(_finite(obj), indent=2, sort_keys=True, default=_json_default, allow_nan=False)
    path.write_text(text + "\n")


def cmd_run(cfg: ExperimentConfig) -> int:
    inst = build_instance(cfg)
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    outcomes = run_all(cfg)
    from .driver import TRACE_COLUMNS
    import csv
    for o in outcomes:
        with open(out / f"trace_seed{o.seed}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for row in o.csv_rows:
                w.writerow([x if isinstance(x, int) else repr(float(x)) for x in row])
        write_posterior_trace(out / f"posterior_seed{o.seed}.csv", o.trace_rows)
    t = np.arange(1, cfg.algorithm.T + 1)
    regret = np.mean([np.cumsum(o.model_regret) for o in outcomes], axis=0)
    mass = np.mean([o.mass_true for o in outcomes], axis=0)
    write_plot_data(out / "regret_vs_t.dat", "t", "cumulative_model_regret", t, regret)
    write_plot_data(out / "posterior_mass_vs_t.dat", "t", "posterior_mass_true", t, mass)
    summary = summarize(cfg, inst, outcomes)
    dump_json(out / "summary.json", summary)
    return 0


def check_battery(cfg: ExperimentConfig) -> dict:
    """Every verification on the configured instance; see ``cmd_check``."""
    inst = build_instance(cfg)
    checks = []
    ti = inst.check_realizable()
    checks.append(dict(name="realizability", passed=ti is not None, value=ti, threshold=None,
                       margin=None))
    if ti is None:
        return {"schema_version": SCHEMA_VERSION, "passed": False, "checks": checks}
    mc = inst.model_class()
    if inst.family != "knr":
        tab = inst.env.to_tabular()
        star_err = float(np.max(np.abs(bellman_error_table(plan(mc.models[ti], tab.initial_states), tab))))
        checks.append(_margin_entry("bellman_error_true_model", star_err, BELLMAN_TOL))
        rng = np.random.default_rng(cfg.instance.seed)
        worst = 0.0
        for _ in range(cfg.analysis.sim_lemma_trials):
            env, cls, p = random_tabular_triple(rng)
            worst = max(worst, an.simulation_lemma_check(env, cls, p))
        tb = an.ClassTables(inst.env, mc)
        for p in an.standard_grid(len(mc)):
            worst = max(worst, an.simulation_lemma_check(inst.env, mc, p, tb))
        checks.append(_margin_entry("simulation_lemma", worst, SIM_LEMMA_TOL,
                                    trials=cfg.analysis.sim_lemma_trials))
        grid = an.standard_grid(len(mc))
        table, ok = [], True
        for h in range(inst.env.horizon):
            ens = an.witness_ensemble(tb, h, grid)
            vals = [an.effective_dimension(ens, e) for e in cfg.analysis.eps_grid]
            ok &= all(v <= ens.dim + 1e-9 for v in vals)
            ok &= all(b <= a + 1e-9 for a, b in zip(vals, vals[1:]))
            table.append({"level": h + 1, "eps": list(cfg.analysis.eps_grid), "d_eff": vals})
        checks.append(dict(name="effective_dimension_table", passed=bool(ok), value=None,
                           threshold=None, margin=None, table=table))
    outcomes = run_all(cfg)
    drift = max(o.max_drift for o in outcomes)
    checks.append(_margin_entry("posterior_recomputation_drift", drift, DRIFT_TOL))
    mass = float(np.mean([o.final_mass_true for o in outcomes]))
    checks.append(dict(name="final_mass_true", passed=True, value=mass, threshold=None,
                       margin=None, note="reported, not asserted"))
    if inst.family == "knr":
        grid = an.standard_grid(len(mc))
        ceil = an.knr_ceiling(inst.env, mc, grid, cfg.analysis.eps)
        checks.append(dict(name="knr_ceiling", passed=True, value=ceil.value, threshold=None,
                           margin=None, ceiling=ceil.as_dict(), note="kappa = sigma"))
    checks.extend(bound_verdicts(cfg, inst, outcomes))
    return {"schema_version": SCHEMA_VERSION, "config": config_to_dict(cfg),
            "passed": all(c["passed"] for c in checks), "checks": checks}


def cmd_check(cfg: ExperimentConfig) -> int:
    verdict = check_battery(cfg)
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(out / "check.json", verdict)
    for c in verdict["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}")
    return 0 if verdict["passed"] else 1


def _parse_dims(pairs) -> dict:
    dims = {}
    for item in pairs or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"dims: expected key=value, got {item!r}")
        try:
            dims[key] = json.loads(raw)
        except json.JSONDecodeError:
            dims[key] = raw
    return dims


def cmd_gen(family: str, dims: dict, seed: int, out: str) -> int:
    try:
        inst = generate(family, seed=seed, **dims)
    except (InstanceError, ValueError) as exc:
        raise ConfigError(f"dims: {exc}") from None
    save_instance(inst, out)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mops")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "check"):
        p = sub.add_parser(name)
        p.add_argument("config")
        p.add_argument("--out", help="override output.dir")
        p.add_argument("--workers", type=int, help="override replication.workers")
    g = sub.add_parser("gen")
    g.add_argument("family", choices=FAMILIES)
    g.add_argument("--dims", nargs="*", help="key=value generator arguments")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    try:
        if args.command == "gen":
            return cmd_gen(args.family, _parse_dims(args.dims), args.seed, args.out)
        cfg = load_config(args.config)
        if args.out:
            cfg.output.dir = args.out
        if args.workers:
            cfg.replication.workers = args.workers
        return cmd_run(cfg) if args.command == "run" else cmd_check(cfg)
    except (ConfigError, InstanceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
