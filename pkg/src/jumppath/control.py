"""Controlled kernels built from positive fields by the Doob ratio.

A field ``h`` defines velocities ``v(x, y) = h(y) / h(x)`` and the
controlled kernel ``v L``.  With the committor this is the optimal
transition-path kernel: it never enters ``A`` and reaches ``B`` almost
surely.  With a backward solution it gives the time-dependent optimal
control of the finite-horizon problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .committor import CommittorSolution
from .entropy import ent
from .errors import AbsorbingState, DimensionMismatch, NegativeField, StateOutOfRange, ZeroDivisor
from .finite_horizon import BackwardSolution, DensityFluxTrajectory, TimeGrid, evolve_with_velocity, optimal_velocity
from .kernel import RateKernel, apply_generator, as_field, as_state_set


@dataclass(frozen=True, eq=False)
class ControlSpec:
    """Velocity field on the pairs of ``base``.

    ``velocity`` is aligned with ``base``'s CSR pair order: shape
    ``(nnz,)`` for a time-homogeneous control, ``(n_steps + 1, nnz)`` for
    one defined on the nodes of ``grid``.  Pairs leaving an absorbing or
    excluded state carry velocity 0.
    """

    base: RateKernel
    velocity: np.ndarray
    source_field: np.ndarray
    absorbing: frozenset[int] = frozenset()
    excluded: frozenset[int] = frozenset()
    grid: TimeGrid | None = None

    @property
    def time_dependent(self) -> bool:
        return self.velocity.ndim == 2

    def velocity_at(self, node: int | None = None) -> np.ndarray:
        if self.time_dependent:
            if node is None:
                raise ValueError("time-dependent control needs a node index")
            return self.velocity[node]
        return self.velocity

    def kernel(self, node: int | None = None) -> RateKernel:
        """Controlled kernel ``v L`` (at a grid node if time dependent)."""
        return self.base.with_pair_rates(self.velocity_at(node) * self.base.data)

    def as_dict(self, node: int | None = None) -> dict[tuple[int, int], float]:
        v = self.velocity_at(node)
        return {(int(x), int(y)): float(s) for x, y, s in zip(self.base.rows, self.base.indices, v)}

    @classmethod
    def constant(cls, k: RateKernel, value: float = 1.0) -> ControlSpec:
        """The control ``v = value`` on every pair."""
        return cls(k, np.full(k.nnz, float(value)), np.ones(k.n_states))


def doob_transform(k: RateKernel, h, absorbing=(), *, strict: bool = True) -> tuple[ControlSpec, RateKernel]:
    """Velocities ``h(y) / h(x)`` and the controlled kernel ``v L``.

    Rates out of ``absorbing`` states are removed.  A non-absorbing state
    with ``h(x) = 0`` raises :class:`ZeroDivisor`; with ``strict=False``
    it is instead recorded in ``excluded`` and its outgoing rates are
    removed, so simulations must not start there.
    """
    h = as_field(h, k.n_states, name="h")
    if (h < 0).any():
        raise NegativeField(f"h has negative entries at {np.flatnonzero(h < 0).tolist()}")
    absorbing = as_state_set(absorbing, k.n_states, name="absorbing", allow_empty=True)
    stop = np.zeros(k.n_states, dtype=bool)
    stop[list(absorbing)] = True
    zero = (h == 0) & ~stop & (k.exit_rates > 0)
    if zero.any() and strict:
        raise ZeroDivisor(f"h vanishes at non-absorbing states {np.flatnonzero(zero).tolist()}")
    rows = k.rows
    active = ~stop[rows] & (h[rows] > 0)
    v = np.zeros(k.nnz)
    v[active] = h[k.indices[active]] / h[rows[active]]
    spec = ControlSpec(k, v, h, absorbing, frozenset(np.flatnonzero(zero).tolist()))
    return spec, spec.kernel()


def transition_path_control(k: RateKernel, sol: CommittorSolution) -> tuple[ControlSpec, RateKernel]:
    """Doob control from a (possibly regularized) committor, absorbing on ``A u B``.

    Interior states with ``h = 0`` (no path to ``B``) are excluded.
    """
    return doob_transform(k, sol.h, sol.A | sol.B, strict=False)


def harmonicity_certificate(k: RateKernel, h, interior) -> float:
    """``max |(L h)(x)|`` over ``interior``; 0 for an empty set."""
    interior = sorted(as_state_set(interior, k.n_states, name="interior", allow_empty=True))
    if not interior:
        return 0.0
    return float(np.abs(apply_generator(k, h)[interior]).max())


def entropy_rate(k: RateKernel, spec: ControlSpec, x: int, node: int | None = None) -> float:
    """``sum_y ent(v(x, y)) L(x, y)``, the running cost rate at ``x``."""
    if not 0 <= x < k.n_states:
        raise StateOutOfRange(f"state {x} outside 0..{k.n_states - 1}")
    if x in spec.absorbing:
        raise AbsorbingState(f"state {x} is absorbing for this control")
    lo, hi = k.indptr[x], k.indptr[x + 1]
    v = spec.velocity_at(node)[lo:hi]
    return float(np.sum(ent(v) * k.data[lo:hi]))


def entropy_rates(k: RateKernel, spec: ControlSpec, node: int | None = None) -> np.ndarray:
    """:func:`entropy_rate` for every state; 0 on absorbing and excluded states."""
    out = np.zeros(k.n_states)
    np.add.at(out, k.rows, ent(spec.velocity_at(node)) * k.data)
    dead = list(spec.absorbing | spec.excluded)
    out[dead] = 0.0
    return out


def finite_horizon_control(k: RateKernel, sol: BackwardSolution) -> ControlSpec:
    """Nodal optimal velocities ``h_t(y) / h_t(x)`` from a backward solution.

    At ``T`` the velocity is ``+inf`` on pairs leaving a state with
    ``h_T = 0`` towards one with ``h_T > 0``.
    """
    return ControlSpec(k, optimal_velocity(k, sol), sol.h, grid=sol.grid)


def controlled_forward(spec: ControlSpec, mu, f=None) -> DensityFluxTrajectory:
    """Evolve ``mu`` under a time-dependent control by exponential midpoint steps."""
    if not spec.time_dependent or spec.grid is None:
        raise DimensionMismatch("controlled_forward needs a control defined on a time grid")
    return evolve_with_velocity(spec.base, spec.velocity, spec.grid, mu, f=f)
