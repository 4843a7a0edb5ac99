"""Jitted exact (Gillespie-type) path sampler.

Random numbers come from a counter-based SplitMix64 stream keyed by
``(seed, path_index)``: draw ``k`` of path ``i`` is a pure function of
``(seed, i, k)``.  Paths are therefore reproducible one at a time and
independent of how an ensemble is split across threads.

Ensembles are produced in two passes over the same streams: the first
counts jumps per path, the second fills preallocated flat arrays.
"""

import math
import os

import numba as nb
import numpy as np

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the TBB probe warns on old system TBB builds; OpenMP is always shipped
    nb.config.THREADING_LAYER = "omp"

HIT_A, HIT_B, HORIZON, MAX_JUMPS, STUCK = 1, 2, 3, 4, 5

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_TWO_M53 = 2.0 ** -53


@nb.njit(cache=True)
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(cache=True)
def path_key(seed, index):
    return _mix(_mix(np.uint64(seed)) + np.uint64(index) * _GOLDEN)


@nb.njit(cache=True)
def uniform(key, counter):
    """Uniform double in (0, 1]."""
    z = _mix(key + (np.uint64(counter) + _ONE) * _GOLDEN)
    return float((z >> _S11) + _ONE) * _TWO_M53


@nb.njit(cache=True)
def _walk(indptr, indices, cum, stop_code, horizon, max_jumps, x0, key,
          times, states, offset, record):
    x = x0
    t = 0.0
    n = 0
    c = 0
    code = stop_code[x]
    if code != 0:
        return 0, code, 0.0
    while True:
        lo = indptr[x]
        hi = indptr[x + 1]
        if hi == lo:
            if horizon < math.inf:
                return n, HORIZON, horizon
            return n, STUCK, t
        if n >= max_jumps:
            return n, MAX_JUMPS, t
        lam = cum[hi - 1]
        t_next = t - math.log(uniform(key, c)) / lam
        c += 1
        if t_next > horizon:
            return n, HORIZON, horizon
        t = t_next
        v = uniform(key, c) * lam
        c += 1
        # first j in [lo, hi) with cum[j] >= v
        a = lo
        b = hi - 1
        while a < b:
            m = (a + b) // 2
            if cum[m] < v:
                a = m + 1
            else:
                b = m
        x = indices[a]
        if record:
            times[offset + n] = t
            states[offset + n] = x
        n += 1
        code = stop_code[x]
        if code != 0:
            return n, code, t


@nb.njit(cache=True, parallel=True)
def count_paths(indptr, indices, cum, stop_code, horizon, max_jumps, starts, seed, first_index):
    n_paths = starts.shape[0]
    counts = np.empty(n_paths, dtype=np.int64)
    reasons = np.empty(n_paths, dtype=np.int8)
    taus = np.empty(n_paths, dtype=np.float64)
    no_t = np.empty(0, dtype=np.float64)
    no_s = np.empty(0, dtype=np.int64)
    for i in nb.prange(n_paths):
        key = path_key(seed, first_index + i)
        n, r, tau = _walk(indptr, indices, cum, stop_code, horizon, max_jumps,
                          starts[i], key, no_t, no_s, 0, False)
        counts[i] = n
        reasons[i] = r
        taus[i] = tau
    return counts, reasons, taus


@nb.njit(cache=True, parallel=True)
def fill_paths(indptr, indices, cum, stop_code, horizon, max_jumps, starts, seed, first_index,
               offsets, times, states):
    for i in nb.prange(starts.shape[0]):
        key = path_key(seed, first_index + i)
        _walk(indptr, indices, cum, stop_code, horizon, max_jumps,
              starts[i], key, times, states, offsets[i], True)


@nb.njit(cache=True)
def row_cumsum(indptr, data):
    """Cumulative rates restarted at every CSR row."""
    out = np.empty_like(data)
    for x in range(indptr.shape[0] - 1):
        s = 0.0
        for j in range(indptr[x], indptr[x + 1]):
            s += data[j]
            out[j] = s
    return out
