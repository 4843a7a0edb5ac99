"""Finite-horizon control of the two-state chain.

The terminal cost forbids ending in state ``a``.  The backward equation
gives ``h``; ``-log h_0`` is the optimal cost and the density driven by
``h_t(y) / h_t(x)`` attains it.  Cut-off costs ``min(f, n)`` approach the
singular problem from below.
"""

import math

import numpy as np

from jumppath import (TimeGrid, cutoff_convergence_study, deterministic_value, evolve_controlled_density,
                      hje_residual, models, perturbed_costs, solve_bke)

k = models.two_state()
T = 1.0
f = np.array([math.inf, 0.0])
grid = TimeGrid(T, 400)

sol = solve_bke(k, f, grid)
closed = 0.5 * (1 - math.exp(-2 * T))
print(f"h_0(a) = {sol.h[0, 0]:.12f}, closed form {closed:.12f}")

value = deterministic_value(sol, 0)
traj = evolve_controlled_density(k, sol, 0)
print(f"value {value:.10f}  action {traj.action:.10f}  terminal {traj.terminal_cost}  p_T = {traj.p[-1]}")

for pc in perturbed_costs(k, sol, 0, (0.1, 0.5, 1.0)):
    print(f"  blend {pc.blend:.1f}: cost {pc.cost}  margin {pc.margin}")

# with a finite penalty the perturbed costs are finite and still larger
bounded = solve_bke(k, np.array([1.0, 0.0]), grid)
for pc in perturbed_costs(k, bounded, 0, (0.1, 0.5, 1.0)):
    print(f"  M=1 blend {pc.blend:.1f}: margin {pc.margin:.5f}")

for steps in (100, 200, 400):
    r = hje_residual(k, solve_bke(k, np.array([1.0, 0.0]), TimeGrid(T, steps)))
    print(f"HJE residual, {steps} steps: {r:.5f}")

rep = cutoff_convergence_study(k, f, grid, [2, 5, 10, 20], mu=0)
for lv in rep.levels:
    print(f"n={lv.n:>4g}  gap at t=0 {lv.gaps[0]:.3e}  bound {lv.bounds[0]:.3e}  value {lv.value:.10f}")
print("cut-off study passed:", rep.passed)
