"""Reactive trajectories of a small chain, by committor and Doob control.

Run with ``python3 demos/transition_paths.py``.
"""

import math

from jumppath import (StopRule, estimate_ensemble, models, solve_committor, stationary_distribution,
                      transition_path_control, validate_kernel)
from jumppath.simulation import value_identity_residuals

# three states, 0 <-> 1 <-> 2, with the middle state leaning towards 2
k = models.three_state()
print("exit rates", validate_kernel(k).exit_rates, "invariant law", stationary_distribution(k))

A, B = {0}, {2}
sol = solve_committor(k, A, B)
print("committor", sol.h, "residual", sol.residual)

# conditioning on reaching B first: rates h(y)/h(x) L(x, y), nothing into A
spec, kh = transition_path_control(k, sol)
print("controlled rates", dict(kh.rates))

stop = StopRule(A, B)
ref, _ = estimate_ensemble(k, None, 1, stop, 100_000, seed=1)
ctl, paths = estimate_ensemble(k, spec, 1, stop, 10_000, seed=2)
print(f"reference : P(B first) = {ref.hitB_fraction:.4f} +- {ref.hitB_se:.4f}  (committor {sol.h[1]:.4f})")
print(f"controlled: P(B first) = {ctl.hitB_fraction:.4f}, paths into A = {ctl.n_hitA}")

# every controlled path carries log Z = -log h(1): the value of the transition
print(f"value -log h(1) = {-math.log(sol.h[1]):.6f}, mean log Z = {ctl.mean_log_Z:.6f}, "
      f"mean entropy cost = {ctl.mean_running_cost:.4f} +- {ctl.running_cost_se:.4f}")
print("worst per-path value identity residual", value_identity_residuals(paths, spec, sol.h).max())
print("mean exp(tau)", ctl.mean_exp_tau, "heavy tail" if ctl.exp_tau_heavy_tail else "tail ok")
print("first path:", paths[0].jump_times, paths[0].states)
