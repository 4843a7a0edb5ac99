"""Committor boundary value problems.

The committor ``h`` of a pair of disjoint sets ``(A, B)`` is harmonic for
the generator away from ``A`` and ``B`` and equals 0 on ``A``, 1 on ``B``.
The regularized variant replaces the 0 on ``A`` by ``exp(-n)``; it is
computed as ``h + exp(-n) * g`` where ``g`` is the committor towards
``A``, which keeps ``log(h^n / h)`` accurate even when ``exp(-n)`` is far
below machine precision relative to ``h``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .errors import NoPaths, SolverError, UnreachableBoundary
from .kernel import DENSE_THRESHOLD, RateKernel, apply_generator, can_reach, check_disjoint

#: Overshoot outside the boundary range that is treated as rounding noise.
CLAMP_TOL = 1e-9


@dataclass(frozen=True)
class CommittorSolution:
    """Solution of the committor problem for ``(A, B)``.

    ``hit_A`` and ``h_exact`` are only set for the regularized problem,
    where ``h = h_exact + exp(-n) * hit_A``.
    """

    h: np.ndarray
    A: frozenset[int]
    B: frozenset[int]
    regularization_n: float | None
    residual: float
    hit_A: np.ndarray | None = None
    h_exact: np.ndarray | None = None

    @property
    def interior(self) -> np.ndarray:
        mask = np.ones(len(self.h), dtype=bool)
        mask[list(self.A | self.B)] = False
        return np.flatnonzero(mask)

    def value(self) -> np.ndarray:
        """Value function ``-log h`` (``+inf`` where ``h = 0``)."""
        with np.errstate(divide="ignore"):
            return -np.log(self.h)


def _interior_solve(k: RateKernel, interior: np.ndarray, boundary: np.ndarray,
                    boundary_values: list[np.ndarray], method: str, tol: float) -> list[np.ndarray]:
    g = k.generator(dense=False).tocsr()
    g_ii = g[interior][:, interior].tocsc()
    g_ib = g[interior][:, boundary]
    rhs = [-(g_ib @ bv) for bv in boundary_values]
    if method == "auto":
        method = "direct" if len(interior) <= DENSE_THRESHOLD else "iterative"
    if method == "direct":
        lu = spla.splu(g_ii)
        return [lu.solve(r) for r in rhs]
    if method == "iterative":
        diag = g_ii.diagonal()
        precond = spla.LinearOperator(g_ii.shape, matvec=lambda v: v / diag)
        out = []
        for r in rhs:
            sol, info = spla.bicgstab(g_ii, r, rtol=tol * 1e-2, atol=0.0, M=precond, maxiter=10 * len(r) + 100)
            if info != 0:
                raise SolverError(f"iterative committor solve did not converge (info={info})")
            out.append(sol)
        return out
    if method == "dense":
        dense = g_ii.toarray()
        return [np.linalg.solve(dense, r) for r in rhs]
    raise ValueError(f"unknown method {method!r}")


def _solve(k: RateKernel, A, B, boundary_sets: list[frozenset[int]], method: str, tol: float):
    A, B = check_disjoint(A, B, k.n_states)
    n = k.n_states
    mask = np.ones(n, dtype=bool)
    mask[list(A | B)] = False
    interior = np.flatnonzero(mask)
    boundary = np.flatnonzero(~mask)
    reach = can_reach(k, A | B)
    stuck = interior[~reach[interior]]
    if len(stuck):
        raise UnreachableBoundary(f"states {stuck.tolist()} cannot reach A or B")
    fields = []
    values = [np.array([1.0 if b in s else 0.0 for b in boundary]) for s in boundary_sets]
    solved = _interior_solve(k, interior, boundary, values, method, tol) if len(interior) else [np.zeros(0)] * len(values)
    for bv, hi in zip(values, solved):
        h = np.zeros(n)
        h[boundary] = bv
        h[interior] = hi
        fields.append(h)
    return A, B, interior, fields


def _clamp(h: np.ndarray, lo: float, hi: float) -> np.ndarray:
    worst = max(lo - h.min(), h.max() - hi, 0.0)
    if worst > CLAMP_TOL:
        raise SolverError(f"solution leaves [{lo}, {hi}] by {worst:.3g}; maximum principle violated")
    return np.clip(h, lo, hi)


def _residual(k: RateKernel, h: np.ndarray, interior: np.ndarray) -> float:
    if not len(interior):
        return 0.0
    return float(np.abs(apply_generator(k, h)[interior]).max())


def _check_residual(k: RateKernel, residual: float, tol: float):
    scale = max(k.total_intensity, 1.0)
    if residual > tol * scale:
        raise SolverError(f"committor residual {residual:.3g} above {tol:g} * c_L")


def solve_committor(k: RateKernel, A, B, *, method: str = "auto", tol: float = 1e-10) -> CommittorSolution:
    """Committor ``h`` with ``h = 0`` on ``A``, ``1`` on ``B``, ``Lh = 0`` elsewhere.

    Parameters
    ----------
    method : {"auto", "direct", "iterative", "dense"}
        ``auto`` factorizes the sparse interior block up to
        ``DENSE_THRESHOLD`` interior states, and uses preconditioned
        BiCGSTAB above that.
    """
    A, B, interior, (h,) = _solve(k, A, B, [B], method, tol)
    h = _clamp(h, 0.0, 1.0)
    res = _residual(k, h, interior)
    _check_residual(k, res, tol)
    return CommittorSolution(h, A, B, None, res)


def solve_committor_regularized(k: RateKernel, A, B, n: float, *, method: str = "auto",
                                tol: float = 1e-10) -> CommittorSolution:
    """Committor with boundary value ``exp(-n)`` on ``A`` instead of 0.

    Satisfies ``exp(-n) <= h^n <= 1``, ``h^n >= h`` and
    ``||h^n - h||_inf <= exp(-n)``.
    """
    if n < 0:
        raise ValueError("regularization level must be nonnegative")
    A, B, interior, (h_b, h_a) = _solve(k, A, B, [B, A], method, tol)
    h_b = _clamp(h_b, 0.0, 1.0)
    h_a = _clamp(h_a, 0.0, 1.0)
    eps = math.exp(-n)
    h = np.clip(h_b + eps * h_a, eps, 1.0)
    res = _residual(k, h, interior)
    _check_residual(k, res, tol)
    return CommittorSolution(h, A, B, float(n), res, hit_A=h_a, h_exact=h_b)


def regularization_gap(sol: CommittorSolution) -> np.ndarray:
    """``-log h(x) + log h^n(x)``, evaluated without cancellation.

    Nonnegative; bounded by ``exp(-n) / h(x)``.  ``+inf`` where ``h = 0``.
    """
    if sol.regularization_n is None:
        return np.zeros_like(sol.h)
    eps = math.exp(-sol.regularization_n)
    with np.errstate(divide="ignore"):
        return np.log1p(eps * sol.hit_A / sol.h_exact)


@dataclass(frozen=True)
class DynkinReport:
    mean: float
    stderr: float
    target: float
    gap: float
    n_paths: int
    n_unstopped: int

    def passed(self, n_se: float = 3.0) -> bool:
        return self.gap <= n_se * self.stderr or self.gap == 0.0


def dynkin_check(k: RateKernel, sol: CommittorSolution, x: int, paths) -> DynkinReport:
    """Compare the empirical mean of ``h(X_tau)`` against ``h(x)``.

    ``paths`` is an ensemble started at ``x`` and stopped on ``A u B``;
    paths cut off before reaching the sets are left out of the mean.
    """
    if len(paths) == 0:
        raise NoPaths("dynkin_check needs at least one path")
    stopped = paths.hit_mask
    vals = sol.h[paths.final_states[stopped]]
    if not len(vals):
        raise NoPaths("no path reached A or B")
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    target = float(sol.h[x])
    return DynkinReport(mean, se, target, abs(mean - target), len(vals), int((~stopped).sum()))
