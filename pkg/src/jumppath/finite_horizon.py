"""Finite-horizon control: backward Kolmogorov equation and its dual.

``h_t = exp((T - t) G) exp(-f)`` solves the backward equation, the
potential ``psi = log h`` solves the Hamilton-Jacobi equation with local
Hamiltonian ``H(x, xi) = sum_y (exp(xi(x, y)) - 1) L(x, y)``, and the
optimal density-flux pair moves with velocity ``h_t(y) / h_t(x)``.

Time stepping uses exact exponential propagators on a uniform grid, so
for a time-homogeneous kernel the only error is that of the matrix
exponential.  Terminal costs may take the value ``+inf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import expm
from scipy.sparse.linalg import expm_multiply

from .entropy import ent
from .errors import DimensionMismatch, ImproperTerminal, InfiniteValue, StepTooLarge
from .kernel import DENSE_THRESHOLD, RateKernel, as_distribution, as_field

#: Largest allowed ``dt * c_L``.
STEP_BOUND = 0.5
#: Gauss-Legendre points per interval for the action integral.
QUAD_POINTS = 4
#: Dyadic refinements of the last interval when ``exp(-f)`` has zeros.
GRADING_LEVELS = 48


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n_steps: int

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"horizon must be positive and finite, got {self.T}")
        if int(self.n_steps) < 1:
            raise ValueError("need at least one time step")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


class Propagator:
    """``exp(s G)`` and ``exp(s G^T)`` applied to vectors, with caching."""

    def __init__(self, k: RateKernel):
        self.kernel = k
        self.dense = k.n_states <= DENSE_THRESHOLD
        self.G = k.generator(dense=self.dense)
        self._cache: dict[float, np.ndarray] = {}

    def matrix(self, s: float) -> np.ndarray:
        s = float(s)
        P = self._cache.get(s)
        if P is None:
            P = expm(s * self.G)
            if P.min() < -1e-12:
                raise ArithmeticError("matrix exponential lost positivity")
            P = np.maximum(P, 0.0)
            self._cache[s] = P
        return P

    def backward(self, vec: np.ndarray, s: float) -> np.ndarray:
        """``exp(s G) vec`` for a vector or a stack of row vectors."""
        if s == 0:
            return np.array(vec, dtype=float)
        if self.dense:
            return np.asarray(vec) @ self.matrix(s).T
        return np.maximum(expm_multiply(s * self.G, np.asarray(vec).T).T, 0.0)

    def forward(self, vec: np.ndarray, s: float) -> np.ndarray:
        """``exp(s G^T) vec``: evolves a density forward by time ``s``."""
        if s == 0:
            return np.array(vec, dtype=float)
        if self.dense:
            return np.asarray(vec) @ self.matrix(s)
        return np.maximum(expm_multiply(s * self.G.T, np.asarray(vec).T).T, 0.0)


@dataclass(frozen=True, eq=False)
class BackwardSolution:
    """Nodal values of ``h`` and ``psi = log h`` on the time grid."""

    kernel: RateKernel
    grid: TimeGrid
    h: np.ndarray
    psi: np.ndarray
    terminal: np.ndarray
    zero_states: tuple[tuple[int, int], ...] = ()
    propagator: Propagator = field(repr=False, default=None)

    @property
    def positive(self) -> bool:
        """Instantaneous positivity: ``h_t > 0`` at every node ``t < T``."""
        return not self.zero_states

    def h_at(self, t: float) -> np.ndarray:
        """``h_t`` at an arbitrary time, propagated from the next node."""
        i = min(int(math.ceil(t / self.grid.dt - 1e-12)), self.grid.n_steps)
        return self.propagator.backward(self.h[i], i * self.grid.dt - t)


def _check_terminal(f, n_states: int) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (n_states,):
        raise DimensionMismatch(f"terminal cost has shape {f.shape}, expected ({n_states},)")
    if np.isnan(f).any() or np.isneginf(f).any():
        raise ImproperTerminal("terminal cost must be real or +inf")
    if (f < 0).any():
        raise ImproperTerminal("terminal cost must be nonnegative")
    if np.isinf(f).all():
        raise ImproperTerminal("terminal cost is +inf everywhere")
    return f


def _check_step(k: RateKernel, grid: TimeGrid):
    if grid.dt * k.total_intensity > STEP_BOUND:
        raise StepTooLarge(
            f"dt * c_L = {grid.dt * k.total_intensity:.3g} exceeds {STEP_BOUND}; use more steps")


def solve_bke(k: RateKernel, f, grid: TimeGrid, propagator: Propagator | None = None) -> BackwardSolution:
    """Backward Kolmogorov equation with terminal data ``h_T = exp(-f)``.

    ``f`` may contain ``+inf`` (``h_T = 0`` there) but not everywhere.
    """
    f = _check_terminal(f, k.n_states)
    _check_step(k, grid)
    prop = propagator or Propagator(k)
    h_T = np.exp(-f)
    n = grid.n_steps
    if np.all(h_T == h_T[0]):
        # constants are invariant under the generator
        h = np.tile(h_T, (n + 1, 1))
    else:
        h = np.empty((n + 1, k.n_states))
        h[n] = h_T
        for i in range(n - 1, -1, -1):
            h[i] = prop.backward(h[i + 1], grid.dt)
    with np.errstate(divide="ignore"):
        psi = np.log(h)
    zeros = tuple((int(i), int(x)) for i, x in zip(*np.nonzero(h[:n] == 0.0)))
    for arr in (h, psi, f):
        arr.setflags(write=False)
    return BackwardSolution(k, grid, h, psi, f, zeros, prop)


def local_hamiltonian(k: RateKernel, x: int, xi) -> float:
    """``H(x, xi) = sum_y (exp(xi(x, y)) - 1) L(x, y)``; ``xi`` may be ``-inf``."""
    xi = k.pair_values(xi)
    lo, hi = k.indptr[x], k.indptr[x + 1]
    return float(np.sum(np.expm1(xi[lo:hi]) * k.data[lo:hi]))


def global_hamiltonian(k: RateKernel, p, xi) -> float:
    """``sum_x p(x) H(x, xi)``."""
    p = as_field(p, k.n_states, name="p")
    xi = k.pair_values(xi)
    return float(np.sum(np.expm1(xi) * k.data * p[k.rows]))


def _flux_values(k: RateKernel, q) -> tuple[np.ndarray, bool]:
    """Align ``q`` with the kernel's pairs; flag mass on pairs with ``L = 0``."""
    off_support = False
    if isinstance(q, dict):
        off_support = any(v > 0 and k.pair_index(x, y) < 0 for (x, y), v in q.items())
    else:
        arr = np.asarray(q, dtype=float)
        if arr.shape == (k.n_states, k.n_states):
            mask = np.ones_like(arr, dtype=bool)
            mask[k.rows, k.indices] = False
            np.fill_diagonal(mask, False)
            off_support = bool((arr[mask] > 0).any())
    vals = k.pair_values(q)
    if (vals < 0).any():
        raise ValueError("flux must be nonnegative")
    return vals, off_support


def lagrangian(k: RateKernel, p, q) -> float:
    """Relative entropy ``Ent(q | p (x) L)``, ``+inf`` without absolute continuity."""
    p = as_field(p, k.n_states, name="p")
    qv, off_support = _flux_values(k, q)
    if off_support:
        return math.inf
    return _lagrangian_pairs(k, p, qv)


def _lagrangian_pairs(k: RateKernel, p: np.ndarray, qv: np.ndarray) -> float:
    base = p[k.rows] * k.data
    if ((qv > 0) & (base <= 0)).any():
        return math.inf
    pos = base > 0
    return float(np.sum(base[pos] * ent(qv[pos] / base[pos])))


@dataclass(frozen=True)
class DualityReport:
    lagrangian: float
    at_optimum: float
    max_sampled: float
    optimum_gap: float
    min_margin: float

    def passed(self, tol: float = 1e-10) -> bool:
        return self.optimum_gap <= tol and self.max_sampled <= self.lagrangian + tol


def duality_gap_check(k: RateKernel, p, q, n_samples: int = 100, seed: int = 0,
                      scale: float = 1.0) -> DualityReport:
    """Check ``<xi, q> - H(p, xi) <= Ent(q | p (x) L)`` with equality at the log-ratio.

    Samples are perturbations of the maximizer plus independent uniform
    fields on ``[-3, 3]``.
    """
    p = as_field(p, k.n_states, name="p")
    qv, off = _flux_values(k, q)
    value = math.inf if off else _lagrangian_pairs(k, p, qv)
    if not math.isfinite(value):
        raise InfiniteValue("duality check needs finite action")
    base = p[k.rows] * k.data
    pos = base > 0
    xi_star = np.full(k.nnz, -np.inf)
    live = pos & (qv > 0)
    xi_star[live] = np.log(qv[live] / base[live])

    def dual(xi):
        lin = np.where(qv > 0, xi * np.where(qv > 0, qv, 1.0), 0.0)
        return float(np.sum(lin) - np.sum(np.expm1(xi) * base))

    at_opt = dual(xi_star)
    rng = np.random.default_rng(seed)
    best = -math.inf
    margin = math.inf
    for i in range(n_samples):
        if i % 2 == 0:
            xi = np.where(np.isfinite(xi_star), xi_star, 0.0) + scale * rng.standard_normal(k.nnz)
        else:
            xi = rng.uniform(-3.0, 3.0, k.nnz)
        d = dual(xi)
        best = max(best, d)
        margin = min(margin, value - d)
    return DualityReport(value, at_opt, best, abs(value - at_opt), margin)


@dataclass(frozen=True, eq=False)
class DensityFluxTrajectory:
    """Nodal densities ``p`` (``n_steps + 1`` rows) and fluxes ``q``.

    ``q[i]`` is the flux at node ``t_i`` for ``i < n_steps``, aligned with
    the kernel's pairs.  ``action`` is the time integral of the
    Lagrangian, ``terminal_cost`` is ``sum f p_T`` with ``0 * inf = 0``.
    """

    grid: TimeGrid
    p: np.ndarray
    q: np.ndarray
    action: float
    terminal_cost: float
    mass_error: float

    @property
    def cost(self) -> float:
        return self.terminal_cost + self.action


def _terminal_cost(f: np.ndarray, p_T: np.ndarray) -> float:
    charged = p_T > 0
    return float(np.sum(f[charged] * p_T[charged]))


def _gauss_nodes(m: int = QUAD_POINTS):
    x, w = leggauss(m)
    return 0.5 * (x + 1.0), 0.5 * w


def evolve_controlled_density(k: RateKernel, sol: BackwardSolution, mu) -> DensityFluxTrajectory:
    """Optimal density-flux pair for initial law ``mu``.

    Uses the Doob factorization ``p_t = h_t * rho_t`` where ``rho`` evolves
    under the reference forward equation from ``mu / h_0``.  The pair
    then satisfies the continuity equation with
    ``q_t(x, y) = h_t(y) / h_t(x) p_t(x) L(x, y)`` exactly, and ``p_T``
    vanishes wherever ``h_T`` does.
    """
    mu = as_distribution(mu, k.n_states, tol=1e-12)
    grid, prop = sol.grid, sol.propagator
    h0 = sol.h[0]
    if (h0[mu > 0] <= 0).any():
        raise InfiniteValue("initial law charges a state with h_0 = 0")
    n = grid.n_steps
    rho = np.empty((n + 1, k.n_states))
    rho[0] = np.where(mu > 0, mu / np.where(h0 > 0, h0, 1.0), 0.0)
    for i in range(n):
        rho[i + 1] = prop.forward(rho[i], grid.dt)
    p = sol.h * rho
    q = rho[:n, k.rows] * sol.h[:n, k.indices] * k.data

    def integrand(r, hh):
        return _lagrangian_pairs(k, hh * r, r[k.rows] * hh[k.indices] * k.data)

    c, w = _gauss_nodes()
    dt = grid.dt
    action = 0.0
    singular = (sol.h[n] == 0).any()
    last = n - 1 if singular else n
    for i in range(last):
        for cj, wj in zip(c, w):
            r = prop.forward(rho[i], cj * dt)
            hh = prop.backward(sol.h[i + 1], (1.0 - cj) * dt)
            action += wj * dt * integrand(r, hh)
    if singular:
        # log-singular integrand near T: dyadic grading towards T
        a = 0.0
        for lev in range(GRADING_LEVELS):
            b = dt * (1.0 - 0.5 ** (lev + 1))
            for cj, wj in zip(c, w):
                s = a + cj * (b - a)
                r = prop.forward(rho[n - 1], s)
                hh = prop.backward(sol.h[n], dt - s)
                action += wj * (b - a) * integrand(r, hh)
            a = b
    mass_error = float(np.abs(p.sum(axis=1) - 1.0).max())
    return DensityFluxTrajectory(grid, p, q, action, _terminal_cost(sol.terminal, p[n]), mass_error)


def evolve_with_velocity(k: RateKernel, velocity: np.ndarray, grid: TimeGrid, mu,
                         f=None) -> DensityFluxTrajectory:
    """Integrate ``dp/dt + div q = 0`` with ``q = v p (x) L`` by exponential midpoint.

    ``velocity`` has one row per node (``n_steps + 1``), aligned with the
    kernel's pairs; ``+inf`` entries are allowed only in the last row.
    On each interval the generator uses the average of the two nodal
    velocities (the left one where the right one is infinite).  The
    action is the trapezoidal sum of nodal Lagrangians; when the last
    node's Lagrangian is infinite, the last interval uses its left node.
    """
    mu = as_distribution(mu, k.n_states, tol=1e-12)
    velocity = np.asarray(velocity, dtype=float)
    n = grid.n_steps
    if velocity.shape != (n + 1, k.nnz):
        raise DimensionMismatch(f"velocity must have shape {(n + 1, k.nnz)}")
    _check_step(k, grid)
    p = np.empty((n + 1, k.n_states))
    p[0] = mu
    for i in range(n):
        right = velocity[i + 1]
        vbar = np.where(np.isfinite(right), 0.5 * (velocity[i] + right), velocity[i])
        ki = k.with_pair_rates(vbar * k.data)
        p[i + 1] = np.maximum(p[i] @ expm(grid.dt * ki.generator(dense=True)), 0.0)
    q = p[:n, k.rows] * velocity[:n] * k.data
    lag = np.empty(n + 1)
    for i in range(n + 1):
        v = velocity[i]
        if np.isfinite(v).all():
            lag[i] = _lagrangian_pairs(k, p[i], p[i, k.rows] * v * k.data)
        else:
            base = p[i, k.rows] * k.data
            lag[i] = math.inf if (np.isinf(v) & (base > 0)).any() else _lagrangian_pairs(
                k, p[i], np.where(np.isinf(v), 0.0, base * v))
    if math.isfinite(lag[n]):
        action = grid.dt * (0.5 * lag[0] + lag[1:n].sum() + 0.5 * lag[n])
    else:
        action = grid.dt * (0.5 * lag[0] + lag[1:n].sum() + 0.5 * lag[n - 1])
    f = np.zeros(k.n_states) if f is None else np.asarray(f, dtype=float)
    mass_error = float(np.abs(p.sum(axis=1) - 1.0).max())
    return DensityFluxTrajectory(grid, p, q, action, _terminal_cost(f, p[n]), mass_error)


def optimal_velocity(k: RateKernel, sol: BackwardSolution) -> np.ndarray:
    """Nodal velocities ``h_t(y) / h_t(x)``; ``+inf`` where ``h_t(x) = 0 < h_t(y)``."""
    hx = sol.h[:, k.rows]
    hy = sol.h[:, k.indices]
    with np.errstate(divide="ignore", invalid="ignore"):
        v = hy / hx
    return np.where(hx > 0, v, np.where(hy > 0, np.inf, 1.0))


def deterministic_value(sol: BackwardSolution, mu) -> float:
    """``-sum_x psi_0(x) mu(x)``."""
    mu = as_distribution(mu, sol.kernel.n_states, tol=1e-12)
    charged = mu > 0
    if np.isneginf(sol.psi[0][charged]).any():
        raise InfiniteValue("initial law charges a state with psi_0 = -inf")
    return float(-np.sum(sol.psi[0][charged] * mu[charged]))


@dataclass(frozen=True)
class PerturbedCost:
    blend: float
    cost: float
    margin: float


def perturbed_costs(k: RateKernel, sol: BackwardSolution, mu, blends=(0.1, 0.5, 1.0)) -> list[PerturbedCost]:
    """Cost of the controls ``(1 - e) v* + e`` against the optimal value.

    ``e = 1`` is the uncontrolled reference dynamics.
    """
    value = deterministic_value(sol, mu)
    v_star = optimal_velocity(k, sol)
    out = []
    for e in blends:
        with np.errstate(invalid="ignore"):
            v = np.where(np.isinf(v_star), np.inf, (1.0 - e) * v_star + e)
        traj = evolve_with_velocity(k, v, sol.grid, mu, f=sol.terminal)
        out.append(PerturbedCost(float(e), traj.cost, traj.cost - value))
    return out


def hje_residual(k: RateKernel, sol: BackwardSolution) -> float:
    """Max of ``|(psi_{i+1} - psi_i) / dt + H(x, grad psi_i)|`` over nodes ``t_i < T``.

    Entries where ``psi_{i+1}`` is ``-inf`` (states with ``h_T = 0`` at the
    last step) are skipped.
    """
    dt = sol.grid.dt
    worst = 0.0
    for i in range(sol.grid.n_steps):
        hi, hn = sol.h[i], sol.h[i + 1]
        ok = (hi > 0) & (hn > 0)
        if not ok.any():
            continue
        ratio = np.zeros(k.nnz)
        src = hi[k.rows] > 0
        ratio[src] = hi[k.indices][src] / hi[k.rows][src]
        H = np.zeros(k.n_states)
        np.add.at(H, k.rows, (ratio - 1.0) * k.data)
        r = (sol.psi[i + 1][ok] - sol.psi[i][ok]) / dt + H[ok]
        worst = max(worst, float(np.abs(r).max()))
    return worst


@dataclass(frozen=True)
class CutoffLevel:
    n: float
    gaps: np.ndarray
    bounds: np.ndarray
    value: float | None


@dataclass(frozen=True)
class CutoffReport:
    levels: list[CutoffLevel]
    value: float | None
    bound_ok: bool
    monotone_h: bool
    monotone_value: bool
    gaps_nonincreasing: bool

    @property
    def passed(self) -> bool:
        return self.bound_ok and self.monotone_h and self.monotone_value and self.gaps_nonincreasing


def cutoff_convergence_study(k: RateKernel, f, grid: TimeGrid, n_list, mu=None,
                             tol: float = 1e-14) -> CutoffReport:
    """Compare ``h`` for terminal cost ``f`` with the cut-offs ``f ^ n``.

    For each ``n`` the nodal gaps ``||h_t - h^n_t||_inf`` are computed by
    propagating ``exp(-f) - exp(-f ^ n)`` directly and checked against
    ``exp(-n) exp((T - t) c_L)``.  Cut-off solutions decrease towards
    ``h`` as ``n`` grows, so the values ``-sum psi^n_0 mu`` increase
    towards the uncut value.
    """
    f = _check_terminal(f, k.n_states)
    prop = Propagator(k)
    exact = solve_bke(k, f, grid, prop)
    value = deterministic_value(exact, mu) if mu is not None else None
    c_L = k.total_intensity
    remaining = grid.T - grid.nodes
    levels, sols = [], []
    for n in sorted(n_list):
        fn = np.minimum(f, n)
        sol_n = solve_bke(k, fn, grid, prop)
        diff = np.empty_like(exact.h)
        diff[-1] = np.exp(-fn) - np.exp(-f)
        for i in range(grid.n_steps - 1, -1, -1):
            diff[i] = prop.backward(diff[i + 1], grid.dt)
        gaps = np.abs(diff).max(axis=1)
        bounds = math.exp(-n) * np.exp(remaining * c_L)
        val = deterministic_value(sol_n, mu) if mu is not None else None
        levels.append(CutoffLevel(float(n), gaps, bounds, val))
        sols.append(sol_n)
    bound_ok = all((lv.gaps <= lv.bounds * (1 + 1e-12) + tol).all() for lv in levels)
    chain = [s.h for s in sols] + [exact.h]
    monotone_h = all((a - b >= -tol).all() for a, b in zip(chain, chain[1:]))
    gaps0 = [lv.gaps[0] for lv in levels]
    gaps_ok = all(b <= a + tol for a, b in zip(gaps0, gaps0[1:]))
    if mu is not None:
        vals = [lv.value for lv in levels] + [value]
        monotone_value = all(b >= a - tol for a, b in zip(vals, vals[1:]))
    else:
        monotone_value = True
    return CutoffReport(levels, value, bound_ok, monotone_h, monotone_value, gaps_ok)
