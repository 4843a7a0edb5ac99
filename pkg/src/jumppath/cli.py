"""Command-line interface: ``jumppath <subcommand> ...``.

Exit codes: 0 success, 1 structural or input error, 2 a statistical
identity check failed.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from .committor import solve_committor, solve_committor_regularized
from .control import ControlSpec, doob_transform
from .errors import JumpPathError, ParseError
from .finite_horizon import (TimeGrid, cutoff_convergence_study, deterministic_value, duality_gap_check,
                             evolve_controlled_density, hje_residual, perturbed_costs, solve_bke)
from .io import _read_json, dumps, load_distribution, load_field, load_model, model_dict, parse_model
from .kernel import is_strongly_connected, stationary_distribution, validate_kernel
from .pipeline import PipelineConfig, run_pipeline
from .simulation import StopRule, ensemble_stats, simulate, with_log_weights

THREADS_ENV = "JUMPPATH_THREADS"


def _emit(obj, out):
    text = dumps(obj)
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def _int_list(text: str, what: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ParseError(f"{what}: expected comma-separated state indices, got {text!r}") from None


def _sets(text: str, model) -> tuple[frozenset[int], frozenset[int]]:
    """``A,B`` means the model's sets; otherwise ``a1,a2/b1,b2``."""
    if text.replace(" ", "") == "A,B":
        return model.A, model.B
    if "/" not in text:
        raise ParseError(f"stop sets: expected 'A,B' or 'a1,a2/b1,b2', got {text!r}")
    a, b = text.split("/", 1)
    return frozenset(_int_list(a, "A")), frozenset(_int_list(b, "B"))


def _absorbing(text: str, model) -> frozenset[int]:
    out = set()
    for tok in (t.strip() for t in text.split(",") if t.strip()):
        if tok == "A":
            out |= model.A
        elif tok == "B":
            out |= model.B
        else:
            try:
                out.add(int(tok))
            except ValueError:
                raise ParseError(f"--absorbing: unknown token {tok!r}") from None
    return frozenset(out)


def set_threads(requested: int | None) -> int:
    """Apply the thread count; the environment variable wins over the flag."""
    import numba

    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            requested = int(env)
        except ValueError:
            raise ParseError(f"{THREADS_ENV}={env!r} is not an integer") from None
    if requested is None:
        return numba.get_num_threads()
    n = max(1, min(int(requested), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


def cmd_validate(args) -> int:
    model = load_model(args.model)
    k = model.kernel
    rep = validate_kernel(k)
    out = {"n_states": k.n_states, "n_pairs": k.nnz, "total_intensity": rep.total_intensity,
           "exit_rates": rep.exit_rates, "absorbing": list(rep.absorbing),
           "strongly_connected": rep.strongly_connected, "degenerate": rep.degenerate}
    if is_strongly_connected(k):
        out["stationary"] = stationary_distribution(k)
    _emit(out, args.out)
    return 0


def cmd_committor(args) -> int:
    model = load_model(args.model)
    if args.regularize is None:
        sol = solve_committor(model.kernel, model.A, model.B)
        out = {"h": sol.h, "residual": sol.residual}
    else:
        sol = solve_committor_regularized(model.kernel, model.A, model.B, args.regularize)
        out = {"h": sol.h, "residual": sol.residual, "n": args.regularize}
    _emit(out, args.out)
    return 0


def cmd_control(args) -> int:
    model = load_model(args.model)
    k = model.kernel
    h = load_field(args.h, k.n_states, "h")
    absorbing = _absorbing(args.absorbing, model)
    spec, kh = doob_transform(k, h, absorbing, strict=False)
    out = model_dict(kh, model.A, model.B)
    out["velocity"] = [[int(x), int(y), format(float(v), ".17g")]
                       for x, y, v in zip(k.rows, k.indices, spec.velocity)]
    out["absorbing"] = sorted(absorbing)
    out["excluded"] = sorted(spec.excluded)
    _emit(out, args.out)
    return 0


def _load_control(path, model) -> ControlSpec:
    obj = _read_json(path)
    k = model.kernel
    if not isinstance(obj, dict) or "velocity" not in obj:
        raise ParseError(f"{path}: control file needs a 'velocity' list")
    parse_model(obj, str(path))  # the controlled kernel itself must be well formed
    v = np.zeros(k.nnz)
    for i, t in enumerate(obj["velocity"]):
        if not isinstance(t, list) or len(t) != 3:
            raise ParseError(f"{path}: velocity[{i}]: expected [x, y, v]")
        j = k.pair_index(int(t[0]), int(t[1]))
        if j < 0:
            raise ParseError(f"{path}: velocity[{i}]: pair ({t[0]}, {t[1]}) has no reference rate")
        v[j] = float(t[2])
    if (v < 0).any() or not np.isfinite(v).all():
        raise ParseError(f"{path}: velocities must be finite and nonnegative")
    return ControlSpec(k, v, np.full(k.n_states, math.nan), frozenset(obj.get("absorbing", [])),
                       frozenset(obj.get("excluded", [])))


def cmd_simulate(args) -> int:
    model = load_model(args.model)
    k = model.kernel
    if args.stop_sets is None and args.horizon is None:
        raise ParseError("give --stop-sets and/or --horizon")
    A, B = _sets(args.stop_sets, model) if args.stop_sets else (frozenset(), frozenset())
    stop = StopRule(A, B, horizon=args.horizon if args.horizon is not None else math.inf,
                    max_jumps=args.max_jumps)
    spec = _load_control(args.control, model) if args.control else None
    if spec is not None and args.start in spec.excluded:
        raise JumpPathError(f"control is undefined at state {args.start}")
    law = k if spec is None else spec.kernel()
    ens = simulate(law, args.start, stop, n_paths=args.n, seed=args.seed)
    if spec is not None:
        ens = with_log_weights(ens, spec)
    stats = ensemble_stats(ens, spec).to_dict()
    stats.update(seed=args.seed, start=args.start)
    _emit(stats, args.out)
    if args.paths:
        write_paths_csv(ens, args.paths)
    return 0


def write_paths_csv(ens, path):
    """One row per visited state: ``path_id, jump_index, time, state`` (jump 0 is the start)."""
    pid, state, start, _ = ens.segments()
    counts = ens.jump_counts + 1
    jump = np.arange(len(pid)) - np.repeat(np.cumsum(counts) - counts, counts)
    pid = pid + ens.first_index
    with open(path, "w") as fh:
        fh.write("path_id,jump_index,time,state\n")
        for row in zip(pid.tolist(), jump.tolist(), start.tolist(), state.tolist()):
            fh.write("%d,%d,%r,%d\n" % row)


def cmd_finite_horizon(args) -> int:
    model = load_model(args.model)
    k = model.kernel
    f = load_field(args.terminal, k.n_states, "f", allow_inf=True)
    grid = TimeGrid(args.T, args.steps)
    sol = solve_bke(k, f, grid)
    mu = load_distribution(args.mu, k.n_states) if args.mu else np.full(k.n_states, 1.0 / k.n_states)
    value = deterministic_value(sol, mu)
    traj = evolve_controlled_density(k, sol, mu)
    out = {"T": args.T, "steps": args.steps, "nodes": grid.nodes, "h": sol.h, "psi_0": sol.psi[0],
           "value": value, "action": traj.action, "terminal_cost": traj.terminal_cost,
           "cost": traj.cost, "verification_gap": abs(traj.cost - value),
           "residuals": {"hje": hje_residual(k, sol), "mass": traj.mass_error},
           "zero_states": [list(z) for z in sol.zero_states],
           "perturbed": [{"blend": p.blend, "cost": p.cost, "margin": p.margin}
                         for p in perturbed_costs(k, sol, mu)]}
    dual = duality_gap_check(k, traj.p[0], traj.q[0], n_samples=64, seed=args.seed)
    out["residuals"]["duality_gap"] = dual.optimum_gap
    if args.cutoff_list:
        levels = [float(t) for t in args.cutoff_list.split(",")]
        rep = cutoff_convergence_study(k, f, grid, levels, mu=mu)
        out["cutoff"] = {"passed": rep.passed, "levels": [
            {"n": lv.n, "gap_0": lv.gaps[0], "bound_0": lv.bounds[0], "value": lv.value} for lv in rep.levels]}
    _emit(out, args.out)
    return 0


def cmd_pipeline(args) -> int:
    if args.config:
        obj = _read_json(args.config)
        if not isinstance(obj, dict):
            raise ParseError(f"{args.config}: config must be an object")
        obj.setdefault("seed", args.seed)
        if args.out:
            obj["out_dir"] = args.out
        cfg = PipelineConfig.from_dict(obj, Path(args.config).parent)
    else:
        if not args.model:
            raise ParseError("pipeline needs --config or --model")
        cfg = PipelineConfig(args.model, seed=args.seed, out_dir=args.out,
                             n_reference=args.n, n_controlled=max(2, args.n // 10), n_martingale=args.n)
    report = run_pipeline(cfg)
    if cfg.out_dir is None:
        _emit(report.to_dict(), None)
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}", file=sys.stderr)
    return report.exit_code


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master random seed")
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker threads for path sampling ({THREADS_ENV} overrides)")
    common.add_argument("--out", default=None, help="output file (directory for pipeline); stdout if omitted")

    p = argparse.ArgumentParser(prog="jumppath", parents=[common],
                                description="Committors, Doob controls and path checks for jump processes.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", parents=[common], help="check a model file and report intensities")
    s.add_argument("--model", required=True)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("committor", parents=[common], help="solve the committor problem")
    s.add_argument("--model", required=True)
    s.add_argument("--regularize", type=float, default=None, metavar="N",
                   help="use boundary value exp(-N) on A")
    s.set_defaults(func=cmd_committor)

    s = sub.add_parser("control", parents=[common], help="Doob-transformed kernel from a field h")
    s.add_argument("--model", required=True)
    s.add_argument("--h", required=True, help="JSON with field 'h' (committor output)")
    s.add_argument("--absorbing", default="A,B", help="states or 'A'/'B' tokens, comma separated")
    s.set_defaults(func=cmd_control)

    s = sub.add_parser("finite-horizon", parents=[common], help="backward equation and optimal density")
    s.add_argument("--model", required=True)
    s.add_argument("--terminal", required=True, help="JSON list or {'f': [...]}; 'inf' allowed")
    s.add_argument("--T", type=float, required=True)
    s.add_argument("--steps", type=int, default=400)
    s.add_argument("--cutoff-list", default=None, help="e.g. 5,10,20")
    s.add_argument("--mu", default=None, help="initial law JSON (default uniform)")
    s.set_defaults(func=cmd_finite_horizon)

    s = sub.add_parser("simulate", parents=[common], help="sample an ensemble of paths")
    s.add_argument("--model", required=True)
    s.add_argument("--control", default=None, help="control file written by 'control'")
    s.add_argument("--start", type=int, required=True)
    s.add_argument("--stop-sets", default=None, help="'A,B' (from the model) or 'a1,a2/b1,b2'")
    s.add_argument("--horizon", type=float, default=None)
    s.add_argument("--n", type=int, default=10_000)
    s.add_argument("--max-jumps", type=int, default=10**6)
    s.add_argument("--paths", default=None, help="also write paths as CSV")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("pipeline", parents=[common], help="end-to-end run with identity checks")
    s.add_argument("--config", default=None)
    s.add_argument("--model", default=None)
    s.add_argument("--n", type=int, default=100_000, help="reference ensemble size without --config")
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        set_threads(args.threads)
        return args.func(args)
    except (JumpPathError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
