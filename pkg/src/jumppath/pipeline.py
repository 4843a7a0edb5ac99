"""End-to-end transition-path run with identity checks.

Steps: committor and regularized committors, Doob control, reference and
controlled ensembles from each start state, then Monte-Carlo checks of
the identities that tie them together.  Structural problems raise;
statistical checks are recorded as pass/fail with their margin and the
tolerance they were judged against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
import scipy

from . import __version__
from .committor import regularization_gap, solve_committor, solve_committor_regularized
from .control import entropy_rates, harmonicity_certificate, transition_path_control
from .errors import JumpPathError, ParseError
from .finite_horizon import (TimeGrid, deterministic_value, evolve_controlled_density, hje_residual,
                             perturbed_costs, solve_bke)
from .io import Model, load_model, write_json
from .kernel import check_disjoint, validate_kernel
from .simulation import (DEFAULT_MAX_JUMPS, StopRule, ensemble_stats, martingale_test, reweighting_check,
                         simulate, substreams, value_identity_residuals, with_log_weights, z_normalization)


@dataclass(frozen=True)
class PipelineConfig:
    """Inputs of :func:`run_pipeline`.

    ``model`` is a path to a model file or a loaded :class:`Model`.  ``A``
    and ``B`` override the sets stored in the model.  ``starts`` defaults
    to every interior state with positive committor.  ``horizon`` adds a
    finite-horizon run with terminal cost ``+inf`` on ``A`` and 0
    elsewhere, from each start, on ``horizon_steps`` steps.
    """

    model: str | Path | Model
    A: tuple[int, ...] | None = None
    B: tuple[int, ...] | None = None
    starts: tuple[int, ...] | None = None
    regularization: tuple[float, ...] = (2, 5, 10)
    n_reference: int = 100_000
    n_controlled: int = 10_000
    n_martingale: int = 100_000
    checkpoints: tuple[float, ...] = (0.25, 0.5, 1.0)
    seed: int = 42
    max_jumps: int = DEFAULT_MAX_JUMPS
    horizon: float | None = None
    horizon_steps: int = 400
    n_se: float = 3.0
    value_tol: float = 1e-12
    verification_tol: float = 5e-4
    out_dir: str | Path | None = None

    def __post_init__(self):
        for name in ("n_reference", "n_controlled", "n_martingale"):
            if getattr(self, name) < 2:
                raise ValueError(f"{name} must be at least 2")
        for name in ("n_se", "value_tol", "verification_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.regularization or any(n < 0 for n in self.regularization):
            raise ValueError("regularization levels must be nonnegative")
        if isinstance(self.model, (str, Path)) and not Path(self.model).is_file():
            raise ParseError(f"model file {self.model} does not exist")

    @classmethod
    def from_dict(cls, obj: dict, base_dir: Path | None = None) -> PipelineConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ParseError(f"unknown config fields: {sorted(unknown)}")
        kw = dict(obj)
        if isinstance(kw.get("model"), str) and base_dir is not None:
            kw["model"] = str((base_dir / kw["model"]).resolve()) if not Path(kw["model"]).is_absolute() else kw["model"]
        for key in ("A", "B", "starts", "regularization", "checkpoints"):
            if kw.get(key) is not None:
                kw[key] = tuple(kw[key])
        return cls(**kw)


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "value": self.value,
                "tolerance": self.tolerance, **self.detail}


@dataclass
class RunReport:
    committor: dict
    control: dict
    reference: dict
    controlled: dict
    checks: list[Check]
    finite_horizon: dict | None
    seeds: dict
    versions: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 2

    def to_dict(self) -> dict:
        return {"passed": self.passed, "committor": self.committor, "control": self.control,
                "reference": self.reference, "controlled": self.controlled,
                "checks": [c.to_dict() for c in self.checks], "finite_horizon": self.finite_horizon,
                "seeds": self.seeds, "versions": self.versions}

    def stats(self) -> dict:
        """Ensemble statistics only (the reproducibility artefact)."""
        return {"seeds": self.seeds, "reference": self.reference, "controlled": self.controlled}


def _martingale_fields(k, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    first = np.zeros(k.nnz)
    first[0] = 1.0
    return {"ones": np.ones(k.nnz), "first_pair": first, "random": rng.uniform(-1.0, 1.0, k.nnz)}


def run_pipeline(cfg: PipelineConfig) -> RunReport:
    model = cfg.model if isinstance(cfg.model, Model) else load_model(cfg.model)
    k = model.kernel
    A = cfg.A if cfg.A is not None else model.A
    B = cfg.B if cfg.B is not None else model.B
    A, B = check_disjoint(A, B, k.n_states)
    report_k = validate_kernel(k)
    sol = solve_committor(k, A, B)
    spec, kh = transition_path_control(k, sol)
    interior = [int(x) for x in sol.interior]
    starts = list(cfg.starts) if cfg.starts is not None else [x for x in interior if sol.h[x] > 0]
    if not starts:
        raise JumpPathError("no interior start state with positive committor")
    stop = StopRule(A, B, max_jumps=cfg.max_jumps)
    seeds = substreams(cfg.seed, 6)
    checks: list[Check] = []

    # regularized committors: values increase to -log h, gap bounded by exp(-n)/h
    levels = sorted(cfg.regularization)
    reg = [solve_committor_regularized(k, A, B, n) for n in levels]
    reg_values = {x: [float(-math.log(r.h[x])) for r in reg] for x in starts}
    worst_gap_ratio = 0.0
    monotone = True
    for x in starts:
        vals = reg_values[x] + [float(-math.log(sol.h[x]))]
        monotone &= all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))
        for n, r in zip(levels, reg):
            bound = math.exp(-n) / sol.h[x]
            worst_gap_ratio = max(worst_gap_ratio, float(regularization_gap(r)[x]) / bound)
    checks.append(Check("regularized_monotonicity", bool(monotone and worst_gap_ratio <= 1 + 1e-9),
                        worst_gap_ratio, 1.0, {"levels": levels, "values": reg_values}))

    cert = harmonicity_certificate(k, sol.h, interior)
    reference, controlled = {}, {}
    dyn_worst = avoid = vid_worst = ent_worst = 0.0
    dyn_ok = ent_ok = True
    for j, x in enumerate(starts):
        ref = simulate(k, x, stop, n_paths=cfg.n_reference, seed=seeds[0] + j)
        st = ensemble_stats(ref)
        reference[str(x)] = st.to_dict()
        hit = ref.hit_mask
        vals = sol.h[ref.final_states[hit]]
        se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
        gap = abs(float(vals.mean()) - float(sol.h[x]))
        dyn_ok &= gap == 0.0 or gap <= cfg.n_se * se
        dyn_worst = max(dyn_worst, gap / se if se > 0 else 0.0)

        ctl = with_log_weights(simulate(kh, x, stop, n_paths=cfg.n_controlled, seed=seeds[1] + j), spec)
        cst = ensemble_stats(ctl, spec)
        controlled[str(x)] = cst.to_dict()
        avoid += cst.n_hitA
        vid_worst = max(vid_worst, float(value_identity_residuals(ctl, spec, sol.h).max()))
        # entropy formula: E_Q[log Z] equals the expected running cost
        rate = entropy_rates(k, spec)
        _, state, start, end = ctl.segments()
        diff = ctl.log_Z - ctl.path_sums(per_segment=(end - start) * rate[state])
        m = float(diff.mean())
        se_d = float(diff.std(ddof=1) / math.sqrt(len(diff)))
        ent_ok &= abs(m) <= cfg.n_se * se_d or abs(m) <= 1e-12
        ent_worst = max(ent_worst, abs(m) / se_d if se_d > 0 else 0.0)

    checks.append(Check("dynkin", bool(dyn_ok), dyn_worst, cfg.n_se, {"unit": "standard errors"}))
    checks.append(Check("A_avoidance", avoid == 0, float(avoid), 0.0, {"unit": "paths hitting A"}))
    checks.append(Check("value_identity", vid_worst <= cfg.value_tol, vid_worst, cfg.value_tol))
    checks.append(Check("entropy_formula", bool(ent_ok), ent_worst, cfg.n_se, {"unit": "standard errors"}))

    # bounded control from the smallest regularization level
    x0 = starts[0]
    bounded, _ = transition_path_control(k, reg[0])
    zref = with_log_weights(simulate(k, x0, stop, n_paths=cfg.n_reference, seed=seeds[2]), bounded)
    zn = z_normalization(zref, bounded)
    checks.append(Check("Z_normalization", zn.passed(cfg.n_se), zn.gap / zn.combined_se if zn.combined_se else 0.0,
                        cfg.n_se, {"regularization": levels[0], **zn.to_dict()}))
    g = np.zeros(k.n_states)
    g[list(B)] = 1.0
    rw = reweighting_check(k, bounded, g, x0, stop, cfg.n_reference, seed=seeds[3])
    checks.append(Check("reweighting", rw.passed(cfg.n_se), rw.gap / rw.combined_se if rw.combined_se else 0.0,
                        cfg.n_se, {"regularization": levels[0], **rw.to_dict()}))

    mart = {}
    mart_ok = True
    mart_worst = 0.0
    for label, kern in (("reference", k), ("controlled", kh)):
        for i, (name, phi) in enumerate(_martingale_fields(kern, seeds[4]).items()):
            r = martingale_test(kern, phi, x0, cfg.checkpoints, cfg.n_martingale,
                                seed=seeds[5] + 3 * (label == "controlled") + i, stop=stop)
            mart[f"{label}/{name}"] = r.to_dict()
            mart_ok &= r.passed(cfg.n_se)
            with np.errstate(divide="ignore", invalid="ignore"):
                z = np.where(r.stderrs > 0, np.abs(r.means) / r.stderrs, 0.0)
            mart_worst = max(mart_worst, float(z.max()))
    checks.append(Check("martingale", bool(mart_ok), mart_worst, cfg.n_se, {"tests": mart}))

    fh = None
    if cfg.horizon is not None:
        f = np.zeros(k.n_states)
        f[list(A)] = math.inf
        grid = TimeGrid(cfg.horizon, cfg.horizon_steps)
        bke = solve_bke(k, f, grid)
        fh = {"T": cfg.horizon, "steps": cfg.horizon_steps, "hje_residual": hje_residual(k, bke),
              "zero_states": [list(z) for z in bke.zero_states], "starts": {}}
        ver_ok, ver_worst, margin_ok = True, 0.0, True
        for x in starts:
            if bke.h[0][x] <= 0:
                continue
            value = deterministic_value(bke, x)
            traj = evolve_controlled_density(k, bke, x)
            margins = perturbed_costs(k, bke, x)
            gap = abs(traj.cost - value)
            ver_ok &= gap <= cfg.verification_tol
            ver_worst = max(ver_worst, gap)
            margin_ok &= all(m.margin > 0 for m in margins)
            fh["starts"][str(x)] = {"value": value, "cost": traj.cost, "action": traj.action,
                                    "mass_error": traj.mass_error,
                                    "perturbed": [{"blend": m.blend, "cost": m.cost, "margin": m.margin}
                                                  for m in margins]}
        checks.append(Check("finite_horizon_verification", bool(ver_ok), ver_worst, cfg.verification_tol))
        checks.append(Check("perturbed_controls_cost_more", bool(margin_ok), 0.0, 0.0))

    committor = {"A": sorted(A), "B": sorted(B), "h": sol.h, "residual": sol.residual,
                 "value": {str(x): float(-math.log(sol.h[x])) for x in starts},
                 "total_intensity": report_k.total_intensity, "absorbing": list(report_k.absorbing)}
    control = {"rates": [[x, y, r] for x, y, r in kh.to_triplets()], "total_intensity": kh.total_intensity,
               "harmonicity": cert, "excluded": sorted(spec.excluded)}
    versions = {"jumppath": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                "numba": numba.__version__}
    report = RunReport(committor, control, reference, controlled, checks, fh,
                       {"master": cfg.seed, "streams": seeds}, versions)
    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        write_json(out / "report.json", report.to_dict())
        write_json(out / "stats.json", report.stats())
    return report
