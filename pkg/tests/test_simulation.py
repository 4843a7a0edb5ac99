import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from jumppath import (ControlSpec, RateKernel, StopReason, StopRule, dynkin_mc, estimate_ensemble,
                      girsanov_log_weight, martingale_test, models, reweighting_check, sample_path, simulate,
                      solve_committor, solve_committor_regularized, transition_path_control)
from jumppath.errors import NoPaths, StuckAbsorbing, ZeroDivisor
from jumppath.simulation import (PathRecord, compensated_sums, ensemble_stats, heavy_tail,
                                 value_identity_residuals, with_log_weights, z_normalization)


def test_start_in_B(m3):
    p = sample_path(m3, 2, StopRule({0}, {2}), seed=3)
    assert p.tau == 0.0 and len(p.jump_times) == 0 and p.stop_reason == StopReason.HIT_B


def test_controlled_m3_single_jump(m3):
    _, kh = transition_path_control(m3, solve_committor(m3, [0], [2]))
    ens = simulate(kh, 1, StopRule({0}, {2}), n_paths=20_000, seed=5)
    assert (ens.jump_counts == 1).all() and (ens.states == 2).all()
    assert (ens.reasons == StopReason.HIT_B).all()
    # tau ~ Exp(3)
    assert stats.kstest(ens.taus, "expon", args=(0, 1 / 3)).pvalue > 1e-3


def test_holding_and_routing_law(m3):
    ens = simulate(m3, 1, StopRule(max_jumps=1), n_paths=50_000, seed=8)
    assert (ens.reasons == StopReason.MAX_JUMPS).all()
    assert stats.kstest(ens.times, "expon", args=(0, 1 / 3)).pvalue > 1e-3
    frac = np.mean(ens.states == 2)
    assert abs(frac - 2 / 3) <= 3 * math.sqrt(2 / 9 / len(ens))


def test_poisson_count_m2(m2):
    T = 5.0
    ens = simulate(m2, 0, StopRule(horizon=T), n_paths=20_000, seed=9)
    c = ens.jump_counts
    assert abs(c.mean() - T) <= 3 * c.std(ddof=1) / math.sqrt(len(c))
    assert (ens.taus == T).all() and (ens.reasons == StopReason.HORIZON).all()


def test_reproducible_and_regenerable(m4):
    stop = StopRule({0}, {3})
    a = simulate(m4, 1, stop, n_paths=500, seed=123)
    b = simulate(m4, 1, stop, n_paths=500, seed=123)
    for arr in ("times", "states", "reasons", "taus", "offsets"):
        np.testing.assert_array_equal(getattr(a, arr), getattr(b, arr))
    assert sample_path(m4, 1, stop, seed=123, index=77) == a[77]
    tail = simulate(m4, 1, stop, n_paths=100, seed=123, first_index=400)
    assert tail[0] == a[400]
    c = simulate(m4, 1, stop, n_paths=500, seed=124)
    assert not np.array_equal(a.taus, c.taus)


def test_stuck_and_horizon_hold():
    k = RateKernel(3, {(1, 0): 1.0, (1, 2): 1.0})
    with pytest.raises(StuckAbsorbing):
        simulate(k, 1, StopRule(max_jumps=5), n_paths=10, seed=0)
    ens = simulate(k, 1, StopRule(horizon=2.0), n_paths=50, seed=0)
    assert (ens.taus == 2.0).all() and (ens.jump_counts == 1).all()


def test_path_invariants(rng):
    k = models.random_kernel(7, rng)
    A, B = {0, 1}, {6}
    ens = simulate(k, 3, StopRule(A, B), n_paths=2000, seed=2)
    for rec in ens:
        assert (np.diff(rec.jump_times) > 0).all()
        seq = np.concatenate([[rec.start], rec.states])
        assert (seq[1:] != seq[:-1]).all()
        assert not (set(seq[:-1].tolist()) & (A | B))
        target = A if rec.stop_reason == StopReason.HIT_A else B
        assert rec.final_state in target
        assert rec.tau == (rec.jump_times[-1] if len(rec.jump_times) else 0.0)


def test_girsanov_examples(m3):
    sol = solve_committor(m3, [0], [2])
    spec, _ = transition_path_control(m3, sol)
    one = ControlSpec.constant(m3)
    p = PathRecord(1, np.array([0.4]), np.array([2]), StopReason.HIT_B, 0.4)
    assert girsanov_log_weight(p, one) == 0.0
    assert girsanov_log_weight(p, spec) == pytest.approx(math.log(1.5), abs=1e-15)
    into_a = PathRecord(1, np.array([0.4]), np.array([0]), StopReason.HIT_A, 0.4)
    assert girsanov_log_weight(into_a, spec) == -math.inf


def test_vectorized_weights_match_single(rng):
    k = models.random_kernel(5, rng)
    spec = ControlSpec(k, rng.uniform(0.3, 2.0, k.nnz), np.ones(5))
    ens = with_log_weights(simulate(k, 2, StopRule(horizon=1.5), n_paths=200, seed=4), spec)
    for i in range(0, 200, 17):
        assert ens.log_Z[i] == pytest.approx(girsanov_log_weight(ens[i], spec), abs=1e-12)


def test_estimate_controlled_m3_m4(m3, m4):
    spec, _ = transition_path_control(m3, solve_committor(m3, [0], [2]))
    st3, _ = estimate_ensemble(m3, spec, 1, StopRule({0}, {2}), 5000, seed=1)
    assert st3.hitB_fraction == 1.0 and st3.n_hitA == 0
    assert st3.mean_log_Z == pytest.approx(math.log(1.5), abs=1e-12)
    spec4, _ = transition_path_control(m4, solve_committor(m4, [0], [3]))
    st4, _ = estimate_ensemble(m4, spec4, 1, StopRule({0}, {3}), 10_000, seed=2)
    assert st4.hitB_fraction == 1.0
    assert st4.mean_log_Z == pytest.approx(math.log(3.0), abs=1e-12)
    with pytest.raises(NoPaths):
        estimate_ensemble(m3, spec, 1, StopRule({0}, {2}), 1)


def test_entropy_cost_equals_weight_mean(m4):
    # E_Q[log Z] is the expected running cost
    spec, _ = transition_path_control(m4, solve_committor(m4, [0], [3]))
    st_, _ = estimate_ensemble(m4, spec, 1, StopRule({0}, {3}), 40_000, seed=6)
    assert abs(st_.mean_running_cost - st_.mean_log_Z) <= 3 * st_.running_cost_se


def test_refuse_excluded_start():
    k = RateKernel(4, {(0, 1): 1.0, (1, 0): 1.0, (1, 2): 1.0, (3, 0): 1.0, (1, 3): 1.0})
    spec, _ = transition_path_control(k, solve_committor(k, [0], [2]))
    with pytest.raises(ZeroDivisor):
        estimate_ensemble(k, spec, 3, StopRule({0}, {2}), 10)


def test_value_identity_residuals(m3, rng):
    sol = solve_committor(m3, [0], [2])
    spec, kh = transition_path_control(m3, sol)
    ens = simulate(kh, 1, StopRule({0}, {2}), n_paths=1000, seed=3)
    assert value_identity_residuals(ens, spec, sol.h).max() <= 1e-12
    ref = simulate(m3, 1, StopRule({0}, {2}), n_paths=1000, seed=3)
    r = value_identity_residuals(ref, spec, sol.h)
    assert np.isinf(r[ref.reasons == StopReason.HIT_A]).all()


def test_reweighting_trivial_and_regularized(m3):
    stop = StopRule({0}, {2})
    g = np.array([0.0, 0.0, 1.0])
    one = reweighting_check(m3, ControlSpec.constant(m3), g, 1, stop, 5000, seed=1)
    assert one.passed()
    spec, _ = transition_path_control(m3, solve_committor_regularized(m3, [0], [2], 2))
    rep = reweighting_check(m3, spec, g, 1, stop, 30_000, seed=2)
    assert rep.passed(), rep
    norm = z_normalization(simulate(m3, 1, stop, n_paths=30_000, seed=3), spec)
    assert norm.passed(), norm


def test_martingale_zero_field_and_poisson(m2):
    rep0 = martingale_test(m2, 0.0, 0, [0.5, 1.0], 100, seed=1)
    np.testing.assert_array_equal(rep0.means, 0.0)
    assert rep0.passed()
    rep = martingale_test(m2, 1.0, 0, [0.5, 1.0, 2.0], 30_000, seed=2)
    assert rep.passed(), rep


def test_compensated_sums_by_hand(m2):
    ens = simulate(m2, 0, StopRule(horizon=3.0), n_paths=20, seed=7)
    for t in (0.7, 3.0):
        n = compensated_sums(ens, 1.0, t)
        for i, rec in enumerate(ens):
            assert n[i] == pytest.approx(np.sum(rec.jump_times <= t) - t, abs=1e-12)


def test_dynkin_mc_boundary_start(m4):
    h = solve_committor(m4, [0], [3]).h
    for x0 in (0, 3):
        rep = dynkin_mc(m4, h, x0, [0], [3], 100, seed=1)
        assert rep.gap == 0.0 and rep.stderr == 0.0


def test_stats_serialization(m3):
    spec = ControlSpec(m3, np.array([0.0, 1.0, 1.0, 1.0]), np.ones(3))
    ens = with_log_weights(simulate(m3, 1, StopRule({0}, {2}), n_paths=200, seed=1), spec)
    d = ensemble_stats(ens, spec).to_dict()
    assert d["n_paths"] == 200 and isinstance(d["exp_tau_heavy_tail"], bool)
    assert all(isinstance(v, (int, float, bool, str)) for v in d.values())


def test_heavy_tail():
    assert not heavy_tail(np.ones(1000))
    x = np.ones(1000)
    x[:5] = 1e4
    assert heavy_tail(x)
    assert heavy_tail(np.array([1.0, np.inf]))


@given(st.integers(0, 2**32 - 1), st.integers(3, 6))
def test_reference_paths_respect_stop_sets(seed, n):
    rng = np.random.default_rng(seed)
    k = models.random_kernel(n, rng)
    ens = simulate(k, 1, StopRule({0}, {n - 1}), n_paths=50, seed=seed)
    fin = ens.final_states
    assert ((fin == 0) == (ens.reasons == StopReason.HIT_A)).all()
    assert ((fin == n - 1) == (ens.reasons == StopReason.HIT_B)).all()


def test_doubling_invariance(m4):
    stop = StopRule({0}, {3})
    s1, _ = estimate_ensemble(m4, None, 2, stop, 20_000, seed=10)
    s2, _ = estimate_ensemble(m4, None, 2, stop, 40_000, seed=11)
    for mean, se in (("hitB_fraction", "hitB_se"), ("mean_tau", "tau_se")):
        combined = math.hypot(getattr(s1, se), getattr(s2, se))
        assert abs(getattr(s1, mean) - getattr(s2, mean)) <= 3 * combined
