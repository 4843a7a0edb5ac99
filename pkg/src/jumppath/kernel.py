"""Finite-state jump kernels and generator algebra.

A :class:`RateKernel` holds the off-diagonal jump rates ``L(x, y)`` of a
continuous-time Markov chain on the states ``0 .. n_states - 1``.  Rates
are kept in CSR order (rows sorted, then columns) and every per-pair
quantity in the package (velocities, fluxes, test functions on pairs) is
an array aligned with that order; see :meth:`RateKernel.pair_values`.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .errors import (
    DiagonalEntry,
    DimensionMismatch,
    DuplicateRateEntry,
    EmptySet,
    NegativeRate,
    NonFiniteRate,
    Reducible,
    SetsOverlap,
    StateOutOfRange,
)

#: Largest state count for which dense generator matrices are materialized.
DENSE_THRESHOLD = 2000


def _check_rate(x: int, y: int, rate: float, n_states: int) -> float:
    if not (0 <= x < n_states and 0 <= y < n_states):
        raise StateOutOfRange(f"pair ({x}, {y}) outside 0..{n_states - 1}")
    if x == y:
        raise DiagonalEntry(f"diagonal entry ({x}, {x}) is not a jump rate")
    rate = float(rate)
    if not math.isfinite(rate):
        raise NonFiniteRate(f"rate L({x}, {y}) = {rate} is not finite")
    if rate < 0:
        raise NegativeRate(f"rate L({x}, {y}) = {rate} is negative")
    return rate


@dataclass(frozen=True, eq=False)
class RateKernel:
    """Sparse nonnegative jump rates on a finite state space.

    Parameters
    ----------
    n_states : int
        Number of states.
    rates : mapping
        ``{(x, y): L(x, y)}`` for ``x != y``.  Zero rates are dropped.
    labels : sequence of str, optional
        Human-readable state names.
    """

    n_states: int
    rates: Mapping[tuple[int, int], float]
    labels: tuple[str, ...] | None = None
    indptr: np.ndarray = field(init=False, repr=False)
    indices: np.ndarray = field(init=False, repr=False)
    data: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = int(self.n_states)
        if n < 1:
            raise DimensionMismatch("a kernel needs at least one state")
        clean = {}
        for (x, y), rate in self.rates.items():
            x, y = int(x), int(y)
            rate = _check_rate(x, y, rate, n)
            if rate > 0.0:
                clean[(x, y)] = rate
        keys = sorted(clean)
        rows = np.array([k[0] for k in keys], dtype=np.int64)
        cols = np.array([k[1] for k in keys], dtype=np.int64)
        data = np.array([clean[k] for k in keys], dtype=float)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        indptr = np.cumsum(indptr)
        for arr in (indptr, cols, data):
            arr.setflags(write=False)
        labels = None
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != n:
                raise DimensionMismatch(f"{len(labels)} labels for {n} states")
        object.__setattr__(self, "n_states", n)
        object.__setattr__(self, "rates", MappingProxyType({k: clean[k] for k in keys}))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", cols)
        object.__setattr__(self, "data", data)

    # -- constructors -----------------------------------------------------
    @classmethod
    def from_triplets(cls, n_states: int, triplets: Iterable[Sequence], labels=None) -> RateKernel:
        """Build from ``[(x, y, rate), ...]``; repeated pairs are an error."""
        rates: dict[tuple[int, int], float] = {}
        for x, y, rate in triplets:
            key = (int(x), int(y))
            if key in rates:
                raise DuplicateRateEntry(f"pair {key} given more than once")
            rates[key] = float(rate)
        return cls(n_states, rates, labels)

    @classmethod
    def from_matrix(cls, matrix, labels=None) -> RateKernel:
        """Build from a square array of rates; the diagonal is ignored."""
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"rate matrix must be square, got {m.shape}")
        rows, cols = np.nonzero(m)
        rates = {(int(i), int(j)): m[i, j] for i, j in zip(rows, cols) if i != j}
        return cls(m.shape[0], rates, labels)

    # -- basic views ------------------------------------------------------
    def __eq__(self, other):
        if not isinstance(other, RateKernel):
            return NotImplemented
        return (
            self.n_states == other.n_states
            and dict(self.rates) == dict(other.rates)
            and self.labels == other.labels
        )

    def __hash__(self):
        return hash((self.n_states, tuple(self.rates.items()), self.labels))

    @property
    def nnz(self) -> int:
        return len(self.data)

    @property
    def rows(self) -> np.ndarray:
        """Source state of every stored pair (CSR order)."""
        return np.repeat(np.arange(self.n_states), np.diff(self.indptr))

    @property
    def exit_rates(self) -> np.ndarray:
        """``lambda(x) = sum_y L(x, y)``."""
        return np.bincount(self.rows, weights=self.data, minlength=self.n_states)

    @property
    def total_intensity(self) -> float:
        """``c_L = max_x lambda(x)``."""
        return float(self.exit_rates.max())

    def rate_matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=(self.n_states,) * 2)

    def generator(self, dense: bool | None = None):
        """Generator ``G = L - diag(lambda)``, sparse unless small (or ``dense``)."""
        if dense is None:
            dense = self.n_states <= DENSE_THRESHOLD
        g = self.rate_matrix() - sp.diags(self.exit_rates)
        return g.toarray() if dense else g.tocsr()

    def pair_index(self, x: int, y: int) -> int:
        """Position of pair ``(x, y)`` in CSR order, or -1."""
        lo, hi = self.indptr[x], self.indptr[x + 1]
        j = lo + np.searchsorted(self.indices[lo:hi], y)
        return int(j) if j < hi and self.indices[j] == y else -1

    def pair_values(self, values) -> np.ndarray:
        """Coerce a field on ordered pairs to an array aligned with CSR order.

        ``values`` may be a scalar, an ``(n, n)`` array, a mapping
        ``{(x, y): v}``, a callable ``v(x, y)`` or an already aligned
        array of length ``nnz``.  Entries on pairs without a rate are
        dropped; they never enter any jump or compensator sum.
        """
        rows, cols = self.rows, self.indices
        if callable(values):
            return np.array([values(int(x), int(y)) for x, y in zip(rows, cols)], dtype=float)
        if isinstance(values, Mapping):
            return np.array([values.get((int(x), int(y)), 0.0) for x, y in zip(rows, cols)], dtype=float)
        arr = np.asarray(values, dtype=float)
        if arr.ndim == 0:
            return np.full(self.nnz, float(arr))
        if arr.shape == (self.n_states, self.n_states):
            return arr[rows, cols].copy()
        if arr.shape == (self.nnz,):
            return arr.copy()
        raise DimensionMismatch(f"cannot align field of shape {arr.shape} with {self.nnz} pairs")

    def with_pair_rates(self, new_data: np.ndarray) -> RateKernel:
        """Same pair structure, new rates (zeros are dropped)."""
        new_data = np.asarray(new_data, dtype=float)
        if new_data.shape != (self.nnz,):
            raise DimensionMismatch(f"expected {self.nnz} rates, got {new_data.shape}")
        rates = {(int(x), int(y)): r for x, y, r in zip(self.rows, self.indices, new_data)}
        return RateKernel(self.n_states, rates, self.labels)

    def to_triplets(self) -> list[tuple[int, int, float]]:
        return [(x, y, r) for (x, y), r in self.rates.items()]


@dataclass(frozen=True)
class KernelReport:
    total_intensity: float
    exit_rates: np.ndarray
    absorbing: tuple[int, ...]
    strongly_connected: bool

    @property
    def degenerate(self) -> bool:
        """True when no state has a positive exit rate (``c_L = 0``)."""
        return self.total_intensity == 0.0


def validate_kernel(k: RateKernel) -> KernelReport:
    """Re-check every stored rate and summarize intensities.

    Construction already rejects bad input, so on a ``RateKernel`` this
    only fails if the object was tampered with.
    """
    for (x, y), r in k.rates.items():
        _check_rate(x, y, r, k.n_states)
    lam = k.exit_rates
    absorbing = tuple(int(i) for i in np.flatnonzero(lam == 0))
    return KernelReport(float(lam.max()), lam, absorbing, is_strongly_connected(k))


def as_field(phi, n_states: int, *, allow_inf: bool = False, name: str = "field") -> np.ndarray:
    arr = np.asarray(phi, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n_states, float(arr))
    if arr.shape != (n_states,):
        raise DimensionMismatch(f"{name} has shape {arr.shape}, expected ({n_states},)")
    if np.isnan(arr).any():
        raise DimensionMismatch(f"{name} contains NaN")
    if not allow_inf and not np.isfinite(arr).all():
        raise DimensionMismatch(f"{name} must be finite")
    return arr


def as_distribution(mu, n_states: int, tol: float = 1e-12) -> np.ndarray:
    """Validate a probability vector; an int means a point mass."""
    if isinstance(mu, (int, np.integer)):
        if not 0 <= mu < n_states:
            raise StateOutOfRange(f"state {mu} outside 0..{n_states - 1}")
        out = np.zeros(n_states)
        out[mu] = 1.0
        return out
    arr = as_field(mu, n_states, name="distribution")
    if (arr < 0).any() or abs(arr.sum() - 1.0) > tol:
        raise DimensionMismatch("distribution must be nonnegative and sum to 1")
    return arr


def as_state_set(members, n_states: int, *, name: str = "set", allow_empty: bool = False) -> frozenset[int]:
    out = frozenset(int(m) for m in members)
    if not out and not allow_empty:
        raise EmptySet(f"{name} is empty")
    bad = [m for m in out if not 0 <= m < n_states]
    if bad:
        raise StateOutOfRange(f"{name} has states outside 0..{n_states - 1}: {sorted(bad)}")
    return out


def check_disjoint(A, B, n_states: int) -> tuple[frozenset[int], frozenset[int]]:
    A = as_state_set(A, n_states, name="A")
    B = as_state_set(B, n_states, name="B")
    if A & B:
        raise SetsOverlap(f"A and B share states {sorted(A & B)}")
    return A, B


def apply_generator(k: RateKernel, phi) -> np.ndarray:
    """``(L phi)(x) = sum_y L(x, y) (phi(y) - phi(x))``."""
    phi = as_field(phi, k.n_states, name="phi")
    grad = phi[k.indices] - phi[k.rows]
    out = np.zeros(k.n_states)
    np.add.at(out, k.rows, k.data * grad)
    return out


def is_strongly_connected(k: RateKernel) -> bool:
    if k.n_states == 1:
        return True
    n, _ = connected_components(k.rate_matrix(), directed=True, connection="strong")
    return n == 1


def can_reach(k: RateKernel, targets: Iterable[int]) -> np.ndarray:
    """Boolean mask of states with a positive-rate path into ``targets``."""
    rev: list[list[int]] = [[] for _ in range(k.n_states)]
    for x, y in zip(k.rows, k.indices):
        rev[y].append(int(x))
    seen = np.zeros(k.n_states, dtype=bool)
    queue = deque(int(t) for t in targets)
    seen[list(queue)] = True
    while queue:
        y = queue.popleft()
        for x in rev[y]:
            if not seen[x]:
                seen[x] = True
                queue.append(x)
    return seen


def stationary_distribution(k: RateKernel, tol: float = 1e-10) -> np.ndarray:
    """Unique invariant law ``pi`` with ``pi^T G = 0``.

    Raises
    ------
    Reducible
        If the jump graph is not strongly connected.
    """
    if not is_strongly_connected(k):
        raise Reducible("jump graph is not strongly connected; no unique invariant law")
    n = k.n_states
    if n == 1:
        return np.ones(1)
    gt = k.generator().T
    # replace the last balance equation by the normalization
    if sp.issparse(gt):
        gt = gt.tolil()
        gt[n - 1, :] = np.ones(n)
        rhs = np.zeros(n)
        rhs[-1] = 1.0
        pi = spla.spsolve(gt.tocsc(), rhs)
    else:
        gt = np.array(gt)
        gt[n - 1, :] = 1.0
        rhs = np.zeros(n)
        rhs[-1] = 1.0
        pi = np.linalg.solve(gt, rhs)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    resid = np.abs(k.generator(dense=False).T @ pi).max()
    if resid > tol * max(k.total_intensity, 1.0):
        raise Reducible(f"stationary solve residual {resid:.3g} above tolerance")
    return pi
