"""Transition paths of finite-state Markov jump processes as optimal control."""

from .committor import (CommittorSolution, dynkin_check, regularization_gap, solve_committor,
                        solve_committor_regularized)
from .control import (ControlSpec, controlled_forward, doob_transform, entropy_rate,
                      finite_horizon_control, harmonicity_certificate, transition_path_control)
from .entropy import ent
from .errors import *  # noqa: F401,F403
from .finite_horizon import (BackwardSolution, DensityFluxTrajectory, TimeGrid, cutoff_convergence_study,
                             deterministic_value, duality_gap_check, evolve_controlled_density,
                             global_hamiltonian, hje_residual, lagrangian, local_hamiltonian,
                             perturbed_costs, solve_bke)
from .kernel import (RateKernel, apply_generator, stationary_distribution, validate_kernel)
from .simulation import (EnsembleStats, PathEnsemble, PathRecord, StopReason, StopRule, dynkin_mc,
                         estimate_ensemble, girsanov_log_weight, martingale_test, reweighting_check,
                         sample_path, simulate)

__version__ = "0.1.0"
