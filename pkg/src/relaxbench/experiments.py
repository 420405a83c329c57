"""Config-driven experiments: run solvers, evaluate checks, write artifacts."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .artifacts import ArtifactWriter
from .config import CheckSpec, ExperimentConfig
from .diagnostics import (
    DiagnosticsReport,
    SweepResult,
    compare_with_limit,
    fit_order,
)
from .limit import (
    LimitRunResult,
    LimitState,
    bln_check,
    interface_fluxes,
    run_limit,
    step_limit,
)
from .model import ConvergenceError, ModelError, invert_rho, validate_assumptions
from .relax import RunResult, SolverError, run
from .steady import System, solve_kp, solve_stationary_2x2, supersolution_bound

EXIT_PASS, EXIT_CHECK_FAILED, EXIT_SOLVER_ERROR, EXIT_CONFIG_ERROR = 0, 1, 2, 3

# round-off allowance for the flux-range (discrete maximum principle) check
FLUX_RANGE_TOL = 1e-12


@dataclass
class Check:
    name: str
    passed: bool
    value: float | None = None
    threshold: float | None = None
    detail: str = ""

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        parts = [f"{verdict} {self.name}"]
        if self.value is not None:
            parts.append(f"value={self.value:.6g}")
        if self.threshold is not None:
            parts.append(f"threshold={self.threshold:.6g}")
        if self.detail:
            parts.append(self.detail)
        return " ".join(parts)


@dataclass
class Outcome:
    kind: str
    checks: list[Check] = field(default_factory=list)
    result: dict = field(default_factory=dict)
    error: dict | None = None
    files: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.error is None and all(c.passed for c in self.checks)

    @property
    def exit_code(self) -> int:
        if self.error is not None:
            return EXIT_SOLVER_ERROR
        return EXIT_PASS if self.passed else EXIT_CHECK_FAILED

    @property
    def status(self) -> str:
        if self.error is not None:
            return "solver_error"
        return "pass" if self.passed else "fail"


def _error_payload(exc: BaseException) -> dict:
    out = {"type": type(exc).__name__, "message": str(exc)}
    t = getattr(exc, "t", None)
    cells = getattr(exc, "cells", None)
    if t is not None:
        out["t"] = float(t)
    if cells is not None:
        out["cells"] = [int(c) for c in np.atleast_1d(cells)]
    return out


# -- state writers --------------------------------------------------------------


def _state_columns(state, grid):
    names = ("u", "v") if len(state.fields) == 2 else ("c1", "c2", "c3")
    return ["x", *names], [grid.centers, *state.fields]


def _write_relax_run(w: ArtifactWriter, prefix: str, res: RunResult, grid) -> None:
    for i, snap in enumerate(res.snapshots):
        header, cols = _state_columns(snap, grid)
        w.csv(f"{prefix}snapshots/snapshot_{i:04d}.csv", header, cols)
    tr = res.traces.as_arrays()
    keys = [k for k in tr if k != "t"]
    w.csv(f"{prefix}traces.csv", ["t", *keys], [tr["t"], *(tr[k] for k in keys)])


def _write_limit_run(w: ArtifactWriter, prefix: str, res: LimitRunResult, het, grid) -> None:
    weight = System(res.final.system).weight
    for i, snap in enumerate(res.snapshots):
        v = invert_rho(het, snap.rho, grid.centers, weight=weight)
        w.csv(f"{prefix}snapshots/snapshot_{i:04d}.csv", ["x", "rho", "v_reconstructed"],
              [grid.centers, snap.rho, v])
    w.csv(f"{prefix}traces.csv", ["t", "rho_0", "rho_L"], [res.times, res.rho_trace_0, res.rho_trace_L])


def _snapshot_every(cfg: ExperimentConfig, n_steps: int) -> int:
    # 0 means initial and final state only
    return cfg.output.snapshot_every or max(n_steps, 1)


# -- checks ---------------------------------------------------------------------


def relax_checks(rep: DiagnosticsReport, checks: CheckSpec, well_prepared: bool, prefix: str = "") -> list[Check]:
    out = []
    if rep.bound_ceiling is not None:
        peak = max(rep.linf.values())
        out.append(Check(f"{prefix}linf_below_ceiling", peak <= rep.bound_ceiling + checks.ceiling_tol,
                         peak, rep.bound_ceiling + checks.ceiling_tol))
    out.append(Check(f"{prefix}nonnegative", rep.min_value >= 0.0, rep.min_value, 0.0))
    if well_prepared and rep.bv_t_series:
        out.append(Check(f"{prefix}time_bv_nonincreasing", rep.bv_t_max_increase <= checks.bv_t_step_tol,
                         rep.bv_t_max_increase, checks.bv_t_step_tol))
        first = rep.bv_t_series[0]
        bound = rep.bv_t_initial_bound + checks.bv_t_initial_tol
        out.append(Check(f"{prefix}time_bv_initial_bound", first <= bound, first, bound))
    out.append(Check(f"{prefix}mass_balance", rep.mass_balance_error <= checks.mass_tol,
                     rep.mass_balance_error, checks.mass_tol))
    if checks.entropy_factor is not None:
        tol = checks.entropy_factor * (rep.dx + rep.dt)
        worst = rep.entropy_worst
        out.append(Check(f"{prefix}entropy_residual", worst <= tol, worst, tol))
    if checks.bv_u_growth_min is not None:
        key = "u" if "u" in rep.bv_x_separate else "c1"
        before, after = rep.bv_x_separate_initial[key], rep.bv_x_separate[key]
        ratio = after / before if before > 0 else float("inf")
        out.append(Check(f"{prefix}bv_{key}_growth", ratio >= checks.bv_u_growth_min, ratio, checks.bv_u_growth_min))
    return out


def well_balanced_residual(het, grid, p_samples, system, steps: int, cfl: float = 0.9) -> dict[str, float]:
    """Run the limit scheme from each steady state and report the drift."""
    from .limit import max_speed

    dt = cfl * grid.dx / max_speed(het, system)
    w = System(system).weight
    out = {}
    for p in p_samples:
        kp = solve_kp(het, grid, p, system)
        rho_p = kp.density(het, grid)
        rho_in = kp.k_left + w * float(het.h(kp.k_left, 0.0))
        state = LimitState(rho=rho_p.copy(), t=0.0, system=System(system))
        for _ in range(steps):
            state = step_limit(state, het, grid, dt, rho_in)
        out[repr(float(p))] = float(np.max(np.abs(state.rho - rho_p)))
    return out


def limit_checks(res: LimitRunResult, het, grid, cfg: ExperimentConfig, prefix: str = "") -> tuple[list[Check], dict]:
    checks = cfg.checks
    rep = res.report
    out = []
    if checks.limit_entropy_factor is not None:
        tol = checks.limit_entropy_factor * (rep.dx + rep.dt)
        out.append(Check(f"{prefix}limit_entropy_residual", rep.entropy_worst <= tol, rep.entropy_worst, tol))
    out.append(Check(f"{prefix}limit_nonnegative", rep.min_rho >= 0.0, rep.min_rho, 0.0))

    # interior flux range may only shrink, apart from what enters at x = 0
    F_in = float(interface_fluxes(LimitState(res.final.rho, res.final.t, res.final.system), het, grid, rep.rho_in)[0])
    lo0, hi0 = rep.flux_range_initial
    lo1, hi1 = rep.flux_range_final
    lo_allowed, hi_allowed = min(lo0, F_in), max(hi0, F_in)
    excess = max(lo_allowed - lo1, hi1 - hi_allowed, 0.0)
    out.append(Check(f"{prefix}limit_flux_range_nonexpanding", excess <= FLUX_RANGE_TOL, excess, FLUX_RANGE_TOL))

    wb = well_balanced_residual(het, grid, rep.p_samples, rep.system, checks.well_balanced_steps, cfg.limit.cfl)
    worst_wb = max(wb.values())
    out.append(Check(f"{prefix}limit_well_balanced", worst_wb <= checks.well_balanced_tol, worst_wb,
                     checks.well_balanced_tol, f"steps={checks.well_balanced_steps}"))
    return out, {"well_balanced_drift": wb}


# -- individual experiments ---------------------------------------------------


def _relax_member(cfg: ExperimentConfig, epsilon: float, root: str, prefix: str):
    """One relaxation run, writing its own files. Picklable for process pools."""
    het, grid = cfg.build_heterogeneity(), cfg.build_grid()
    rc = cfg.relax_config(epsilon)
    n_steps, _ = rc.time_steps(grid)
    w = ArtifactWriter(root)
    try:
        res = run(rc, het, grid, system=cfg.system, p_samples=cfg.p_samples,
                  snapshot_every=_snapshot_every(cfg, n_steps))
    except (SolverError, ConvergenceError, ModelError) as exc:
        err = _error_payload(exc)
        w.json(f"{prefix}report.json", {"epsilon": epsilon, "error": err})
        return None, err, w.written
    _write_relax_run(w, prefix, res, grid)
    w.json(f"{prefix}report.json", {"epsilon": epsilon, "report": res.report.to_dict()})
    return res, None, w.written


def _member_prefix(i: int, eps: float) -> str:
    return f"members/{i:02d}_eps_{eps:.3e}/"


def _run_members(cfg: ExperimentConfig, root: str, jobs: int):
    tasks = [(cfg, eps, root, _member_prefix(i, eps)) for i, eps in enumerate(cfg.epsilons)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            return list(pool.map(_relax_member, *zip(*tasks)))
    return [_relax_member(*t) for t in tasks]


def _exp_relax(cfg: ExperimentConfig, w: ArtifactWriter, jobs: int) -> Outcome:
    out = Outcome(cfg.kind)
    res, err, files = _relax_member(cfg, cfg.relax.epsilon, str(w.root), "")
    w.written.extend(f for f in files if f != "report.json")
    if err:
        out.error = err
        return out
    out.checks = relax_checks(res.report, cfg.checks, cfg.problem.well_prepared)
    out.result = {"report": res.report.to_dict()}
    return out


def _exp_limit(cfg: ExperimentConfig, w: ArtifactWriter, jobs: int) -> Outcome:
    out = Outcome(cfg.kind)
    het, grid = cfg.build_heterogeneity(), cfg.build_grid()
    lc = cfg.limit_config()
    n_steps, _ = lc.time_steps(het, grid)
    res = run_limit(lc, het, grid, p_samples=cfg.p_samples, snapshot_every=_snapshot_every(cfg, n_steps))
    _write_limit_run(w, "", res, het, grid)
    out.checks, extra = limit_checks(res, het, grid, cfg)
    out.result = {"report": res.report.to_dict(), **extra}
    return out


def _sweep(cfg: ExperimentConfig, w: ArtifactWriter, jobs: int, out: Outcome):
    """Run every sweep member; returns the successful RunResults or None on error."""
    members = _run_members(cfg, str(w.root), jobs)
    for _, _, files in members:
        w.written.extend(files)
    errors = [(eps, e) for eps, (_, e, _) in zip(cfg.epsilons, members) if e]
    if errors:
        eps, err = errors[0]
        out.error = {**err, "epsilon": eps}
        return None
    results = [r for r, _, _ in members]
    for eps, r in zip(cfg.epsilons, results):
        out.checks += relax_checks(r.report, cfg.checks, cfg.problem.well_prepared, prefix=f"eps={eps:.0e}:")

    # combined x-BV must stay under one eps-independent ceiling
    reports = [r.report for r in results]
    ceiling = reports[0].bv_x_combined_initial + reports[0].bv_t_initial_bound + cfg.checks.bv_x_tol
    peak = max(rep.bv_x_combined for rep in reports)
    out.checks.append(Check("bv_x_combined_uniform", peak <= ceiling, peak, ceiling))
    return results


def _eq_dev_order(cfg: ExperimentConfig, reports) -> float | None:
    ys = [rep.eq_dev_l2 for rep in reports]
    if len(ys) < 3 or min(ys) <= 0:
        return None
    return fit_order(cfg.epsilons, ys)


def _exp_sweep(cfg: ExperimentConfig, w: ArtifactWriter, jobs: int) -> Outcome:
    out = Outcome(cfg.kind)
    results = _sweep(cfg, w, jobs, out)
    if results is None:
        return out
    reports = [r.report for r in results]
    sweep = SweepResult(cfg.system.value, list(cfg.epsilons), reports, eq_dev_order=_eq_dev_order(cfg, reports))
    _order_check(cfg, sweep, out)
    _write_sweep(w, sweep)
    out.result = {"sweep": sweep.to_dict()}
    return out


def _order_check(cfg: ExperimentConfig, sweep: SweepResult, out: Outcome) -> None:
    if sweep.eq_dev_order is None:
        out.checks.append(Check("eq_dev_order", False, None, cfg.checks.eq_dev_min_order,
                                "needs >= 3 epsilons with positive deviation"))
    else:
        out.checks.append(Check("eq_dev_order", sweep.eq_dev_order >= cfg.checks.eq_dev_min_order,
                                sweep.eq_dev_order, cfg.checks.eq_dev_min_order))


def _write_sweep(w: ArtifactWriter, sweep: SweepResult) -> None:
    header = ["eps", "eq_dev", "dissipation_ratio", "l1_dist", "bvx_combined", "bvx_u", "order"]
    w.rows("sweep_summary.csv", header, sweep.summary_rows())


def _exp_compare(cfg: ExperimentConfig, w: ArtifactWriter, jobs: int) -> Outcome:
    out = Outcome(cfg.kind)
    results = _sweep(cfg, w, jobs, out)
    if results is None:
        return out
    het, grid = cfg.build_heterogeneity(), cfg.build_grid()
    lc = cfg.limit_config()
    n_steps, _ = lc.time_steps(het, grid)
    lim = run_limit(lc, het, grid, p_samples=cfg.p_samples, snapshot_every=_snapshot_every(cfg, n_steps))
    _write_limit_run(w, "limit/", lim, het, grid)
    lchecks, extra = limit_checks(lim, het, grid, cfg)
    out.checks += lchecks

    reports = [r.report for r in results]
    l1 = [compare_with_limit(r.final, lim.final, grid) for r in results]
    l1_order = fit_order(cfg.epsilons, l1) if len(l1) >= 3 and min(l1) > 0 else None
    sweep = SweepResult(cfg.system.value, list(cfg.epsilons), reports, l1_dist=l1,
                        eq_dev_order=_eq_dev_order(cfg, reports), l1_order=l1_order)
    _order_check(cfg, sweep, out)
    monotone = all(b < a for a, b in zip(l1, l1[1:]))
    out.checks.append(Check("l1_dist_monotone", monotone, None, None, "l1=" + ",".join(f"{d:.4g}" for d in l1)))
    ratio = l1[0] / l1[-1] if l1[-1] > 0 else float("inf")
    out.checks.append(Check("l1_dist_ratio", ratio >= cfg.checks.l1_min_ratio, ratio, cfg.checks.l1_min_ratio))

    result = {"sweep": sweep.to_dict(), "limit": lim.report.to_dict(), **extra}
    if cfg.system is System.THREE:
        tr = results[-1].traces.as_arrays()
        w_L = np.interp(lim.times, tr["t"], tr["c1_L"])
        bln = bln_check(lim.times, lim.rho_trace_0, lim.rho_trace_L, w_L, het, lim.report.p_samples,
                        system=System.THREE, rho_boundary_0=lim.report.rho_in)
        out.checks.append(Check("bln_boundary", bln.worst_violation <= cfg.checks.bln_tol,
                                bln.worst_violation, cfg.checks.bln_tol, f"w_L from eps={cfg.epsilons[-1]:.0e}"))
        result["bln"] = bln.to_dict()
    _write_sweep(w, sweep)
    out.result = result
    return out


def _exp_steady(cfg: ExperimentConfig, w: ArtifactWriter, jobs: int) -> Outcome:
    out = Outcome(cfg.kind)
    het, grid = cfg.build_heterogeneity(), cfg.build_grid()
    st = cfg.steady
    prof = solve_stationary_2x2(het, grid, st.epsilon, st.U0, st.alpha)
    w.csv("steady.csv", ["x", "U", "V"], [grid.centers, prof.U, prof.V])
    tol = cfg.checks.steady_tol
    out.checks.append(Check("steady_shooting_residual", abs(prof.shooting_residual) <= tol * st.U0,
                            abs(prof.shooting_residual), tol * st.U0))
    if st.expected_K is not None:
        err = abs(prof.K - st.expected_K)
        out.checks.append(Check("steady_K", err <= tol, err, tol, f"K={prof.K!r}"))
    out.result = {
        "K": prof.K,
        "roots": list(prof.roots),
        "multiple_roots": prof.multiple_roots,
        "layer_resolved": prof.layer_resolved,
        "U_L": prof.U_L,
        "U_0": prof.U_0,
        "shooting_residual": prof.shooting_residual,
        "ceiling": supersolution_bound(prof, het),
    }
    return out


def _exp_kp(cfg: ExperimentConfig, w: ArtifactWriter, jobs: int) -> Outcome:
    out = Outcome(cfg.kind)
    het, grid = cfg.build_heterogeneity(), cfg.build_grid()
    system = cfg.kp.system
    profiles = [solve_kp(het, grid, p, system) for p in cfg.kp.p]
    w.csv("kp.csv", ["x", *(f"k(p={p!r})" for p in cfg.kp.p)], [grid.centers, *(kp.k for kp in profiles)])
    resid = {repr(kp.p): kp.residual(het, grid) for kp in profiles}
    worst = max(resid.values(), default=0.0)
    out.checks.append(Check("kp_residual", worst <= cfg.checks.kp_tol, worst, cfg.checks.kp_tol))
    out.result = {
        "system": system.value,
        "residual": resid,
        "k_left": {repr(kp.p): kp.k_left for kp in profiles},
        "k_right": {repr(kp.p): kp.k_right for kp in profiles},
    }
    return out


def _exp_validate(cfg: ExperimentConfig, w: ArtifactWriter, jobs: int) -> Outcome:
    out = Outcome(cfg.kind)
    het, grid = cfg.build_heterogeneity(), cfg.build_grid()
    vm = cfg.validate_model
    rep = validate_assumptions(het, grid, vm.v_max, vm.n_v_samples)
    out.checks.append(Check("model_assumptions", rep.ok, None, None, "; ".join(rep.violations)))
    out.result = {"validation": rep}
    return out


RUNNERS: dict[str, Callable[[ExperimentConfig, ArtifactWriter, int], Outcome]] = {
    "relax2": _exp_relax,
    "relax3": _exp_relax,
    "limit2": _exp_limit,
    "limit3": _exp_limit,
    "sweep-eps": _exp_sweep,
    "compare": _exp_compare,
    "steady": _exp_steady,
    "kp": _exp_kp,
    "validate-model": _exp_validate,
}


def resolve_jobs(jobs: int | None) -> int:
    """Explicit value, else RELAXBENCH_JOBS, else 1."""
    if jobs is None:
        env = os.environ.get("RELAXBENCH_JOBS", "").strip()
        jobs = int(env) if env else 1
    if jobs < 1:
        raise ValueError(f"jobs must be >= 1, got {jobs}")
    return jobs


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None, jobs: int | None = None) -> Outcome:
    """Run one configured experiment and write its artifacts.

    ``report.json`` is always written, also when a solver fails, and embeds
    the resolved config. The only run-dependent field is the timestamp in
    its ``metadata`` block.
    """
    root = Path(out_dir if out_dir is not None else cfg.output.dir)
    w = ArtifactWriter(root)
    jobs = resolve_jobs(jobs)
    try:
        outcome = RUNNERS[cfg.kind](cfg, w, jobs)
    except (SolverError, ConvergenceError, ModelError) as exc:
        outcome = Outcome(cfg.kind, error=_error_payload(exc))
    outcome.files = sorted(set(w.written) | {"report.json"})
    w.json(
        "report.json",
        {
            "metadata": {
                "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
                "relaxbench_version": __version__,
            },
            "kind": cfg.kind,
            "config": cfg.resolved(),
            "status": outcome.status,
            "exit_code": outcome.exit_code,
            "checks": outcome.checks,
            "error": outcome.error,
            "result": outcome.result,
            "files": outcome.files,
        },
    )
    return outcome
