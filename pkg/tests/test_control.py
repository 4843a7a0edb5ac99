import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

import oracles
from jumppath import (ControlSpec, RateKernel, doob_transform, entropy_rate, harmonicity_certificate, models,
                      solve_bke, solve_committor, solve_committor_regularized, TimeGrid,
                      transition_path_control, evolve_controlled_density)
from jumppath.control import controlled_forward, entropy_rates, finite_horizon_control
from jumppath.errors import AbsorbingState, NegativeField, ZeroDivisor


def test_identity_transform(m3):
    spec, kh = doob_transform(m3, np.ones(3))
    np.testing.assert_array_equal(spec.velocity, 1.0)
    assert kh == m3


def test_m3_transition_path_kernel(m3):
    sol = solve_committor(m3, [0], [2])
    spec, kh = transition_path_control(m3, sol)
    assert kh.rates.get((1, 0), 0.0) == 0.0
    assert kh.rates[(1, 2)] == pytest.approx(3.0, rel=1e-15)
    # no rates out of A or B
    assert set(kh.rates) == {(1, 2)}
    assert kh.total_intensity == pytest.approx(3.0)


def test_m4_transition_path_kernel(m4):
    spec, kh = doob_transform(m4, solve_committor(m4, [0], [3]).h, {0, 3})
    expect = {(1, 2): 2.0, (2, 3): 1.5, (2, 1): 0.5}
    assert set(kh.rates) == set(expect)
    for pair, r in expect.items():
        assert kh.rates[pair] == pytest.approx(r, rel=1e-14)


def test_errors(m3):
    with pytest.raises(ZeroDivisor):
        doob_transform(m3, [0, 2 / 3, 1])
    with pytest.raises(NegativeField):
        doob_transform(m3, [-0.1, 0.5, 1])
    spec, _ = doob_transform(m3, [0, 2 / 3, 1], strict=False)
    assert spec.excluded == {0}


def test_excluded_pocket():
    # state 3 leads only to A: its committor is 0 and the control is undefined there
    k = RateKernel(4, {(0, 1): 1.0, (1, 0): 1.0, (1, 2): 1.0, (3, 0): 1.0, (1, 3): 1.0})
    sol = solve_committor(k, [0], [2])
    spec, kh = transition_path_control(k, sol)
    assert spec.excluded == {3}
    assert kh.rates.get((1, 3), 0.0) == 0.0


def test_harmonicity(m3):
    h = solve_committor(m3, [0], [2]).h
    assert harmonicity_certificate(m3, h, [1]) <= 1e-10
    assert harmonicity_certificate(m3, np.ones(3), [0, 1, 2]) == 0.0
    assert harmonicity_certificate(m3, [0, 0.5, 1], [1]) == pytest.approx(0.5)


def test_entropy_rate_examples(m3):
    assert entropy_rate(m3, ControlSpec.constant(m3), 1) == 0.0
    spec, _ = transition_path_control(m3, solve_committor(m3, [0], [2]))
    expect = oracles.ent(0.0) * 1 + oracles.ent(1.5) * 2
    assert entropy_rate(m3, spec, 1) == pytest.approx(expect, rel=1e-14)
    assert expect == pytest.approx(3 * math.log(1.5), rel=1e-14)
    with pytest.raises(AbsorbingState):
        entropy_rate(m3, spec, 0)
    np.testing.assert_allclose(entropy_rates(m3, spec), [0, expect, 0])


def test_a_avoidance_random(rng):
    for _ in range(10):
        k = models.random_kernel(8, rng)
        sol = solve_committor(k, [0, 1], [7])
        _, kh = transition_path_control(k, sol)
        assert not any(y in (0, 1) for (_, y) in kh.rates)


@given(st.integers(3, 7), st.integers(0, 2**32 - 1))
def test_doob_composition(n, seed):
    rng = np.random.default_rng(seed)
    k = models.random_kernel(n, rng)
    h = rng.uniform(0.1, 2.0, n)
    _, kh = doob_transform(k, h)
    _, back = doob_transform(kh, 1.0 / h)
    for pair, r in k.rates.items():
        assert back.rates[pair] == pytest.approx(r, rel=1e-12)


@given(st.integers(3, 7), st.integers(0, 2**32 - 1))
def test_regularized_kernels_converge(n, seed):
    rng = np.random.default_rng(seed)
    k = models.random_kernel(n, rng)
    exact = solve_committor(k, [0], [n - 1])
    _, kh = transition_path_control(k, exact)
    live = [x for x in exact.interior if exact.h[x] > 0]
    assume(live)
    pairs = [p for p in k.rates if p[0] in live]
    prev = math.inf
    for lvl in (5, 10, 20, 40):
        _, kn = transition_path_control(k, solve_committor_regularized(k, [0], [n - 1], lvl))
        err = max(abs(kn.rates.get(p, 0.0) - kh.rates.get(p, 0.0)) for p in pairs)
        assert err <= prev + 1e-15
        prev = err
    assert prev <= 1e-12 * max(1.0, k.total_intensity) / exact.h[live].min()


def test_finite_horizon_control_matches_density(m2):
    sol = solve_bke(m2, [1.0, 0.0], TimeGrid(1.0, 400))
    spec = finite_horizon_control(m2, sol)
    assert spec.time_dependent
    stepped = controlled_forward(spec, 0, f=[1.0, 0.0])
    exact = evolve_controlled_density(m2, sol, 0)
    np.testing.assert_allclose(stepped.p, exact.p, atol=1e-6)
    assert stepped.cost == pytest.approx(exact.cost, abs=1e-5)


def test_finite_horizon_control_singular_terminal(m2):
    sol = solve_bke(m2, [math.inf, 0.0], TimeGrid(1.0, 400))
    spec = finite_horizon_control(m2, sol)
    assert np.isinf(spec.velocity[-1][m2.pair_index(0, 1)])
    stepped = controlled_forward(spec, 0)
    exact = evolve_controlled_density(m2, sol, 0)
    # away from the singular end the two integrators agree to O(dt^2)
    nodes = sol.grid.nodes <= 0.9
    np.testing.assert_allclose(stepped.p[nodes], exact.p[nodes], atol=1e-5)
