"""Estimating a small committor by importance sampling.

A birth-death chain drifting back to 0 rarely reaches the far end.  Plain
simulation sees almost no successes; simulating under the Doob control of
a regularized committor and reweighting by ``Z`` gives a sharp estimate.
"""

import math

import numpy as np

from jumppath import StopRule, models, simulate, solve_committor, solve_committor_regularized, transition_path_control
from jumppath.simulation import with_log_weights

k = models.birth_death(12, up=1.0, down=2.5)
A, B = {0}, {11}
x0 = 3
exact = solve_committor(k, A, B).h[x0]
print(f"exact committor h({x0}) = {exact:.4e}")

stop = StopRule(A, B)
N = 20_000
plain = simulate(k, x0, stop, n_paths=N, seed=7)
hits = np.mean(plain.final_states == 11)
print(f"plain MC : {hits:.4e} +- {math.sqrt(hits * (1 - hits) / N):.1e}  ({int(hits * N)} hits)")

# controlled law from a cut-off committor; the cut-off e^-n should sit
# below the probability being estimated, otherwise the tilt is weak
for n in (2, 10):
    spec, kh = transition_path_control(k, solve_committor_regularized(k, A, B, n))
    ctl = simulate(kh, x0, stop, n_paths=N, seed=8)
    # weights are the inverse Radon-Nikodym density of the controlled law
    w = np.exp(-with_log_weights(ctl, spec).log_Z) * (ctl.final_states == 11)
    print(f"n={n:<3d}weighted : {w.mean():.4e} +- {w.std(ddof=1) / math.sqrt(N):.1e}  "
          f"(controlled paths reaching B: {np.mean(ctl.final_states == 11):.3f})")
