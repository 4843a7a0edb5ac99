"""Exact path simulation, Girsanov weights and Monte-Carlo identity checks.

Ensembles are stored as flat arrays (all jumps of all paths back to back,
indexed by ``offsets``); :class:`PathRecord` is the per-path view.  Every
random draw is a pure function of ``(seed, path index, draw counter)``,
so a path can be regenerated on its own and results do not depend on
the thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import _engine
from .committor import DynkinReport
from .control import ControlSpec, entropy_rates
from .errors import NoPaths, StateOutOfRange, StuckAbsorbing, ZeroDivisor
from .kernel import RateKernel, as_field, as_state_set, check_disjoint

DEFAULT_MAX_JUMPS = 10**6


class StopReason(IntEnum):
    HIT_A = _engine.HIT_A
    HIT_B = _engine.HIT_B
    HORIZON = _engine.HORIZON
    MAX_JUMPS = _engine.MAX_JUMPS


@dataclass(frozen=True)
class StopRule:
    """Stop on first entry into ``A`` or ``B``, at ``horizon``, or after ``max_jumps``."""

    A: frozenset[int] = frozenset()
    B: frozenset[int] = frozenset()
    horizon: float = math.inf
    max_jumps: int = DEFAULT_MAX_JUMPS

    def __post_init__(self):
        object.__setattr__(self, "A", frozenset(int(a) for a in self.A))
        object.__setattr__(self, "B", frozenset(int(b) for b in self.B))
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.max_jumps < 0:
            raise ValueError("max_jumps must be nonnegative")

    def codes(self, n_states: int) -> np.ndarray:
        as_state_set(self.A | self.B, n_states, name="stop set", allow_empty=True)
        if self.A and self.B:
            check_disjoint(self.A, self.B, n_states)
        code = np.zeros(n_states, dtype=np.int8)
        code[list(self.A)] = StopReason.HIT_A
        code[list(self.B)] = StopReason.HIT_B
        return code


@dataclass(frozen=True, eq=False)
class PathRecord:
    start: int
    jump_times: np.ndarray
    states: np.ndarray
    stop_reason: StopReason
    tau: float
    log_Z: float = 0.0
    seed: int = 0
    index: int = 0

    @property
    def final_state(self) -> int:
        return int(self.states[-1]) if len(self.states) else self.start

    def __eq__(self, other):
        if not isinstance(other, PathRecord):
            return NotImplemented
        return (self.start == other.start and self.stop_reason == other.stop_reason
                and self.tau == other.tau and self.seed == other.seed and self.index == other.index
                and np.array_equal(self.jump_times, other.jump_times)
                and np.array_equal(self.states, other.states)
                and (self.log_Z == other.log_Z or (math.isnan(self.log_Z) and math.isnan(other.log_Z))))


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Paths ``first_index .. first_index + n - 1`` of the stream ``seed``.

    ``times[offsets[i]:offsets[i + 1]]`` and ``states[...]`` are the jump
    times and post-jump states of path ``i``.
    """

    kernel: RateKernel
    stop: StopRule
    seed: int
    first_index: int
    starts: np.ndarray
    offsets: np.ndarray
    times: np.ndarray
    states: np.ndarray
    reasons: np.ndarray
    taus: np.ndarray
    log_Z: np.ndarray | None = None
    _segments: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.starts)

    def __getitem__(self, i: int) -> PathRecord:
        n = len(self)
        if not -n <= i < n:
            raise IndexError(i)
        i %= n
        lo, hi = self.offsets[i], self.offsets[i + 1]
        return PathRecord(int(self.starts[i]), self.times[lo:hi].copy(), self.states[lo:hi].copy(),
                          StopReason(int(self.reasons[i])), float(self.taus[i]),
                          0.0 if self.log_Z is None else float(self.log_Z[i]),
                          self.seed, self.first_index + i)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def jump_counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def final_states(self) -> np.ndarray:
        out = self.starts.copy()
        moved = self.jump_counts > 0
        out[moved] = self.states[self.offsets[1:][moved] - 1]
        return out

    @property
    def hit_mask(self) -> np.ndarray:
        """Paths stopped on ``A`` or ``B``."""
        return (self.reasons == StopReason.HIT_A) | (self.reasons == StopReason.HIT_B)

    def count(self, reason: StopReason) -> int:
        return int(np.sum(self.reasons == reason))

    def segments(self):
        """Holding intervals of all paths: ``(path, state, start, end)`` arrays.

        Path ``i`` contributes ``jump_count + 1`` segments, the last one
        ending at its stopping time.
        """
        if not self._segments:
            n, counts = len(self), self.jump_counts
            seg_off = self.offsets + np.arange(n + 1)
            total = seg_off[-1]
            first = np.zeros(total, dtype=bool)
            first[seg_off[:-1]] = True
            state = np.empty(total, dtype=np.int64)
            state[first] = self.starts
            state[~first] = self.states
            start = np.empty(total)
            start[first] = 0.0
            start[~first] = self.times
            end = np.empty(total)
            end[:-1] = start[1:]
            last = seg_off[1:] - 1
            end[last] = self.taus
            self._segments.update(path=np.repeat(np.arange(n), counts + 1), state=state,
                                  start=start, end=end, last=last)
        s = self._segments
        return s["path"], s["state"], s["start"], s["end"]

    def jump_sources(self) -> np.ndarray:
        """State occupied just before each jump (aligned with ``states``)."""
        _, state, _, _ = self.segments()
        keep = np.ones(len(state), dtype=bool)
        keep[self._segments["last"]] = False
        return state[keep]

    def path_sums(self, per_jump: np.ndarray | None = None, per_segment: np.ndarray | None = None) -> np.ndarray:
        """Sum per-jump or per-segment values into one number per path."""
        out = np.zeros(len(self))
        if per_jump is not None:
            out += np.bincount(np.repeat(np.arange(len(self)), self.jump_counts),
                               weights=per_jump, minlength=len(self))
        if per_segment is not None:
            out += np.bincount(self._segments_path(), weights=per_segment, minlength=len(self))
        return out

    def _segments_path(self):
        return self.segments()[0]


def _seed_value(seed: int) -> np.uint64:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must lie in [0, 2**64)")
    return np.uint64(seed)


def simulate(k: RateKernel, x0, stop: StopRule, n_paths: int | None = None, seed: int = 0,
             first_index: int = 0) -> PathEnsemble:
    """Sample independent paths of the jump process with rates ``k``.

    ``x0`` is one start state (then ``n_paths`` is required) or an array
    of start states.  Raises :class:`StuckAbsorbing` if a path reaches a
    state without exits before any stopping rule applies.
    """
    starts = np.atleast_1d(np.asarray(x0, dtype=np.int64))
    if n_paths is not None:
        if starts.size != 1:
            raise ValueError("give either one start state with n_paths or an array of starts")
        starts = np.full(int(n_paths), starts[0], dtype=np.int64)
    if ((starts < 0) | (starts >= k.n_states)).any():
        raise StateOutOfRange("start state outside the state space")
    code = stop.codes(k.n_states)
    cum = _engine.row_cumsum(k.indptr.astype(np.int64), k.data)
    indptr = k.indptr.astype(np.int64)
    indices = k.indices.astype(np.int64)
    s = _seed_value(seed)
    first = np.int64(first_index)
    args = (indptr, indices, cum, code, float(stop.horizon), np.int64(stop.max_jumps), starts, s, first)
    counts, reasons, taus = _engine.count_paths(*args)
    if (reasons == _engine.STUCK).any():
        i = int(np.argmax(reasons == _engine.STUCK))
        raise StuckAbsorbing(f"path {first_index + i} reached a state with no exits before stopping")
    offsets = np.zeros(len(starts) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    times = np.empty(offsets[-1])
    states = np.empty(offsets[-1], dtype=np.int64)
    _engine.fill_paths(*args, offsets, times, states)
    return PathEnsemble(k, stop, int(seed), int(first_index), starts, offsets, times, states, reasons, taus)


def sample_path(k: RateKernel, x0: int, stop: StopRule, seed: int = 0, index: int = 0) -> PathRecord:
    """One path; identical to entry ``index`` of any ensemble with the same seed."""
    return simulate(k, [x0], stop, seed=seed, first_index=index)[0]


def _pair_lookup(base: RateKernel, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    keys = base.rows.astype(np.int64) * base.n_states + base.indices
    want = src.astype(np.int64) * base.n_states + dst
    pos = np.searchsorted(keys, want)
    ok = pos < len(keys)
    ok[ok] = keys[pos[ok]] == want[ok]
    if not ok.all():
        raise ValueError("path jumps across a pair without reference rate")
    return pos


def _log_weights(ens: PathEnsemble, spec: ControlSpec) -> np.ndarray:
    base = spec.base
    v = spec.velocity_at()
    src = ens.jump_sources()
    pos = _pair_lookup(base, src, ens.states)
    with np.errstate(divide="ignore"):
        log_v = np.log(v[pos])
    comp = np.zeros(base.n_states)
    np.add.at(comp, base.rows, (v - 1.0) * base.data)
    _, state, start, end = ens.segments()
    return ens.path_sums(per_jump=log_v, per_segment=-(end - start) * comp[state])


def girsanov_log_weight(path: PathRecord, spec: ControlSpec, base: RateKernel | None = None) -> float:
    """``sum log v(x_{i-1}, x_i) - integral sum_y (v(X_s, y) - 1) L(X_s, y) ds``.

    Returns ``-inf`` if the path crosses a pair with ``v = 0``.  The same
    functional applies whether the path was drawn under ``L`` or ``v L``.
    """
    base = spec.base if base is None else base
    if base != spec.base:
        raise ValueError("control is defined on a different reference kernel")
    v = spec.velocity_at()
    seq = np.concatenate([[path.start], path.states]).astype(np.int64)
    pos = _pair_lookup(base, seq[:-1], seq[1:])
    with np.errstate(divide="ignore"):
        jumps = float(np.sum(np.log(v[pos])))
    comp = np.zeros(base.n_states)
    np.add.at(comp, base.rows, (v - 1.0) * base.data)
    t = np.concatenate([[0.0], path.jump_times, [path.tau]])
    return jumps - float(np.sum(np.diff(t) * comp[seq]))


def with_log_weights(ens: PathEnsemble, spec: ControlSpec) -> PathEnsemble:
    """Copy of ``ens`` carrying the log Girsanov weight of every path."""
    if spec.time_dependent:
        raise NotImplementedError("path weights need a time-homogeneous control")
    return PathEnsemble(ens.kernel, ens.stop, ens.seed, ens.first_index, ens.starts, ens.offsets,
                        ens.times, ens.states, ens.reasons, ens.taus, _log_weights(ens, spec))


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    if len(x) == 0:
        return math.nan, math.nan
    with np.errstate(invalid="ignore", over="ignore"):
        m = float(np.mean(x))
        se = float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else math.nan
    return m, se


def _json_number(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    x = float(x)
    return x if math.isfinite(x) else str(x)


@dataclass(frozen=True)
class EnsembleStats:
    """Summary of one ensemble; ``*_se`` are standard errors of the means.

    ``tau`` and ``exp_tau`` statistics leave out paths stopped by the jump
    cap.  ``exp_tau_heavy_tail`` is set when the largest 1% of the
    ``exp(tau)`` samples carry more than half of their sum.
    """

    n_paths: int
    hitB_fraction: float
    hitB_se: float
    mean_tau: float
    tau_se: float
    mean_exp_tau: float
    exp_tau_se: float
    exp_tau_heavy_tail: bool
    mean_log_Z: float
    log_Z_se: float
    mean_running_cost: float
    running_cost_se: float
    n_hitA: int
    n_hitB: int
    n_horizon: int
    n_max_jumps: int

    def to_dict(self) -> dict:
        return {k: _json_number(v) for k, v in self.__dict__.items()}


def heavy_tail(samples: np.ndarray, top: float = 0.01, share: float = 0.5) -> bool:
    """True when the largest ``top`` fraction of samples carries more than ``share`` of the sum."""
    if len(samples) == 0:
        return False
    total = samples.sum()
    if not math.isfinite(total):
        return True
    if total == 0:
        return False
    m = max(1, math.ceil(top * len(samples)))
    return bool(np.sort(samples)[-m:].sum() > share * total)


def ensemble_stats(ens: PathEnsemble, spec: ControlSpec | None = None) -> EnsembleStats:
    n = len(ens)
    if n < 2:
        raise NoPaths("ensemble statistics need at least two paths")
    hit_b = (ens.reasons == StopReason.HIT_B).astype(float)
    capped = ens.reasons == StopReason.MAX_JUMPS
    tau = ens.taus[~capped]
    with np.errstate(over="ignore"):
        exp_tau = np.exp(tau)
    if spec is not None:
        if ens.log_Z is None:
            ens = with_log_weights(ens, spec)
        log_z = ens.log_Z
        rate = entropy_rates(spec.base, spec)
        _, state, start, end = ens.segments()
        cost = ens.path_sums(per_segment=(end - start) * rate[state])
    else:
        log_z = np.zeros(n)
        cost = np.zeros(n)
    hb, hb_se = _mean_se(hit_b)
    mt, mt_se = _mean_se(tau)
    me, me_se = _mean_se(exp_tau)
    mz, mz_se = _mean_se(log_z)
    mc, mc_se = _mean_se(cost)
    return EnsembleStats(n, hb, hb_se, mt, mt_se, me, me_se, heavy_tail(exp_tau), mz, mz_se, mc, mc_se,
                         ens.count(StopReason.HIT_A), ens.count(StopReason.HIT_B),
                         ens.count(StopReason.HORIZON), ens.count(StopReason.MAX_JUMPS))


def _check_start(spec: ControlSpec | None, x0: int):
    if spec is not None and int(x0) in spec.excluded:
        raise ZeroDivisor(f"control is undefined at state {x0}")


def estimate_ensemble(k: RateKernel, spec: ControlSpec | None, x0: int, stop: StopRule,
                      n_paths: int, seed: int = 0) -> tuple[EnsembleStats, PathEnsemble]:
    """Simulate under ``spec``'s kernel (or ``k``) and summarize.

    Log weights and running costs are taken relative to ``k``.
    """
    if n_paths < 2:
        raise NoPaths("need at least two paths")
    _check_start(spec, x0)
    law = k if spec is None else spec.kernel()
    ens = simulate(law, x0, stop, n_paths=n_paths, seed=seed)
    if spec is not None:
        ens = with_log_weights(ens, spec)
    return ensemble_stats(ens, spec), ens


def substreams(seed: int, n: int) -> list[int]:
    """``n`` independent 63-bit seeds derived from ``seed``."""
    state = np.random.SeedSequence(int(seed)).generate_state(n, dtype=np.uint64)
    return [int(s >> np.uint64(1)) for s in state]


@dataclass(frozen=True)
class ComparisonReport:
    """Two Monte-Carlo means and their agreement in combined standard errors."""

    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float

    @property
    def gap(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def combined_se(self) -> float:
        return math.sqrt(self.lhs_se**2 + self.rhs_se**2)

    def passed(self, n_se: float = 3.0) -> bool:
        return self.gap == 0.0 or self.gap <= n_se * self.combined_se

    def to_dict(self) -> dict:
        return {k: _json_number(v) for k, v in
                dict(lhs=self.lhs, lhs_se=self.lhs_se, rhs=self.rhs, rhs_se=self.rhs_se,
                     gap=self.gap, combined_se=self.combined_se).items()}


def reweighting_check(k: RateKernel, spec: ControlSpec, g, x0: int, stop: StopRule,
                      n_paths: int, seed: int = 0) -> ComparisonReport:
    """``E_ref[Z_tau g(X_tau)]`` against ``E_ctrl[g(X_tau)]`` from independent ensembles.

    Needs ``v`` bounded away from 0 and infinity on reachable pairs.
    """
    g = as_field(g, k.n_states, name="g")
    _check_start(spec, x0)
    s_ref, s_ctl = substreams(seed, 2)
    ref = with_log_weights(simulate(k, x0, stop, n_paths=n_paths, seed=s_ref), spec)
    ctl = simulate(spec.kernel(), x0, stop, n_paths=n_paths, seed=s_ctl)
    lhs, lhs_se = _mean_se(np.exp(ref.log_Z) * g[ref.final_states])
    rhs, rhs_se = _mean_se(g[ctl.final_states])
    return ComparisonReport(lhs, lhs_se, rhs, rhs_se)


def z_normalization(ens: PathEnsemble, spec: ControlSpec) -> ComparisonReport:
    """Empirical ``E[Z_tau]`` under the reference law against 1."""
    if ens.log_Z is None:
        ens = with_log_weights(ens, spec)
    m, se = _mean_se(np.exp(ens.log_Z))
    return ComparisonReport(m, se, 1.0, 0.0)


@dataclass(frozen=True)
class MartingaleReport:
    checkpoints: np.ndarray
    means: np.ndarray
    stderrs: np.ndarray

    def passed(self, n_se: float = 3.0) -> bool:
        ok = (self.means == 0) | (np.abs(self.means) <= n_se * self.stderrs)
        return bool(ok.all())

    def to_dict(self) -> dict:
        return {"checkpoints": [float(t) for t in self.checkpoints],
                "means": [_json_number(m) for m in self.means],
                "stderrs": [_json_number(s) for s in self.stderrs]}


def compensated_sums(ens: PathEnsemble, phi, t: float) -> np.ndarray:
    """``N_t = sum_{jumps <= t} phi(X_-, X) - int_0^t sum_y phi(X_s, y) L(X_s, y) ds`` per path.

    Paths are frozen at their stopping time, so this is ``N`` at ``t ^ tau``.
    """
    k = ens.kernel
    phi = k.pair_values(phi)
    src = ens.jump_sources()
    pos = _pair_lookup(k, src, ens.states)
    jump_part = np.where(ens.times <= t, phi[pos], 0.0)
    rate = np.zeros(k.n_states)
    np.add.at(rate, k.rows, phi * k.data)
    _, state, start, end = ens.segments()
    overlap = np.clip(np.minimum(end, t) - start, 0.0, None)
    return ens.path_sums(per_jump=jump_part, per_segment=-overlap * rate[state])


def martingale_test(k: RateKernel, phi, x0: int, checkpoints, n_paths: int, seed: int = 0,
                    stop: StopRule | None = None) -> MartingaleReport:
    """Check that the compensated jump sums of ``phi`` have mean zero at each checkpoint."""
    checkpoints = np.sort(np.asarray(checkpoints, dtype=float))
    horizon = float(checkpoints[-1])
    if stop is None:
        stop = StopRule(horizon=horizon)
    else:
        stop = StopRule(stop.A, stop.B, min(stop.horizon, horizon), stop.max_jumps)
    ens = simulate(k, x0, stop, n_paths=n_paths, seed=seed)
    if ens.count(StopReason.MAX_JUMPS):
        raise NoPaths("jump cap reached before the last checkpoint")
    means, ses = [], []
    for t in checkpoints:
        m, se = _mean_se(compensated_sums(ens, phi, t))
        means.append(m)
        ses.append(se)
    return MartingaleReport(checkpoints, np.array(means), np.array(ses))


def dynkin_mc(k: RateKernel, h, x0: int, A, B, n_paths: int, seed: int = 0,
              max_jumps: int = DEFAULT_MAX_JUMPS) -> DynkinReport:
    """Empirical mean of ``h(X_tau)`` over paths stopped on ``A u B`` against ``h(x0)``."""
    h = as_field(h, k.n_states, name="h")
    A, B = check_disjoint(A, B, k.n_states)
    ens = simulate(k, x0, StopRule(A, B, max_jumps=max_jumps), n_paths=n_paths, seed=seed)
    stopped = ens.hit_mask
    vals = h[ens.final_states[stopped]]
    if not len(vals):
        raise NoPaths("no path reached A or B")
    mean, se = _mean_se(vals)
    se = 0.0 if math.isnan(se) else se
    return DynkinReport(mean, se, float(h[x0]), abs(mean - float(h[x0])), len(vals),
                        int((~stopped).sum()))


def value_identity_residuals(ens: PathEnsemble, spec: ControlSpec, h) -> np.ndarray:
    """Per path ``|f(X_tau) + log Z_tau + log h(x0)|`` with ``f = 0`` on ``B``, ``+inf`` elsewhere.

    Paths not stopped in ``B`` get ``+inf``.
    """
    h = as_field(h, ens.kernel.n_states, name="h")
    if ens.log_Z is None:
        ens = with_log_weights(ens, spec)
    with np.errstate(divide="ignore"):
        r = np.abs(ens.log_Z + np.log(h[ens.starts]))
    return np.where(ens.reasons == StopReason.HIT_B, r, np.inf)
