import numpy as np
import pytest
from hypothesis import given, strategies as st

from mops.generators import (GeneratorError, GeneratorKind, PolicyGenerator, g_optimal_design,
                             generate)
from mops.instances import make_knr
from mops.posterior import LogPosterior


def _post(weights):
    with np.errstate(divide="ignore"):
        return LogPosterior(np.log(np.asarray(weights, float)))


def test_qtype_does_not_depend_on_h(reference):
    inst, mc = reference
    post = LogPosterior.from_prior(mc)
    gen = PolicyGenerator(GeneratorKind.QTYPE)
    tables = [generate(gen, h, post, mc, np.random.default_rng(5)).table for h in (1, 2)]
    assert np.array_equal(tables[0], tables[1])


def test_double_degenerates_under_point_mass(reference):
    inst, mc = reference
    w = np.zeros(len(mc)); w[2] = 1.0
    for h in (1, 2):
        q = generate(PolicyGenerator("q_type"), h, _post(w), mc, np.random.default_rng(0)).table
        d = generate(PolicyGenerator("v_double"), h, _post(w), mc, np.random.default_rng(0)).table
        assert np.array_equal(q, d)


def test_uniform_replaces_one_level(reference):
    inst, mc = reference
    post = LogPosterior.from_prior(mc)
    for h in (1, 2):
        pol = generate(PolicyGenerator("v_uniform"), h, post, mc, np.random.default_rng(1))
        base = mc.plans[pol.draws[0]].policy_table()
        assert np.all(pol.table[:, h - 1] == 0.5)
        other = [lvl for lvl in range(2) if lvl != h - 1]
        assert np.array_equal(pol.table[:, other], base[:, other])


def test_randomness_consumed_independent_of_h(reference):
    inst, mc = reference
    post = LogPosterior.from_prior(mc)
    states = []
    for h in (1, 2):
        rng = np.random.default_rng(9)
        generate(PolicyGenerator("v_double"), h, post, mc, rng)
        states.append(rng.bit_generator.state)
    assert states[0] == states[1]


def test_design_needs_feature_map():
    with pytest.raises(GeneratorError):
        PolicyGenerator("v_design")


@given(st.integers(0, 10_000), st.integers(2, 12), st.integers(1, 5))
def test_design_meets_leverage_bound(seed, n, d):
    X = np.random.default_rng(seed).normal(size=(n, d))
    des = g_optimal_design(X)
    rank = np.linalg.matrix_rank(X)
    assert des.dim == rank
    assert des.max_leverage <= rank * (1 + 1e-3)
    assert des.weights.sum() == pytest.approx(1.0) and np.all(des.weights >= 0)


def test_design_on_standard_basis_is_uniform():
    des = g_optimal_design(np.eye(4))
    assert 0.5 * np.abs(des.weights - 0.25).sum() <= 1e-6


def test_design_handles_rank_deficient_sets():
    X = np.array([[1.0, 2.0], [2.0, 4.0], [-1.0, -2.0]])
    des = g_optimal_design(X)
    assert des.dim == 1 and des.max_leverage <= 1 + 1e-3


def test_knr_policies():
    inst = make_knr(seed=2)
    mc = inst.model_class(rollout_budget=16)
    post = LogPosterior.from_prior(mc)
    rng = np.random.default_rng(0)
    pol = generate(PolicyGenerator("v_uniform", knr_budget=8), 2, post, mc, rng, inst.env)
    x = inst.env.initial_state
    assert pol.table is None and 0 <= pol.executable(0, x) < inst.env.num_actions
    assert pol.executable(1, x) == pol.executable(1, x)
    with pytest.raises(GeneratorError):
        generate(PolicyGenerator("v_uniform"), 1, post, mc, rng)
    fmap = lambda c, l, s: np.eye(5)
    with pytest.raises(GeneratorError):
        generate(PolicyGenerator("v_design", fmap), 1, post, mc, rng, inst.env)
