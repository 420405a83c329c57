"""Norms, entropy residuals and convergence orders measured on runs."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .model import Grid, Heterogeneity, invert_h
from .steady import KpProfile, System, solve_kp, solve_stationary_2x2, supersolution_bound

N_P_SAMPLES = 17


class DiagnosticsError(ValueError):
    pass


def bv_x(f) -> float:
    """Total variation ``sum_j |f_{j+1} - f_j|`` of a grid function."""
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise DiagnosticsError("bv_x of a non-finite field")
    return float(np.abs(np.diff(f)).sum())


def time_bv_step(prev, nxt, dt: float, dx: float) -> float:
    """Discrete ``int |d_t u| + |d_t v| dx`` between two time levels."""
    total = 0.0
    for a, b in zip(prev.fields, nxt.fields):
        if a.shape != b.shape:
            raise DiagnosticsError("states live on different grids")
        total += float(np.abs(b - a).sum())
    return total * dx / dt


def initial_time_bv_bound(state0, config) -> float:
    """K1 + K2: x-BV of the initial data extended by the boundary values.

    For equilibrium data the first-step time derivative is bounded by the
    spatial variation of every field including the jumps to the inflow
    values at the domain ends.
    """
    from .relax import State2, ghosts2, ghosts3

    if isinstance(state0, State2):
        u_in, v_in = ghosts2(state0, config)
        return bv_x(np.concatenate([[u_in], state0.u])) + bv_x(np.concatenate([state0.v, [v_in]]))
    g1, g2, g3 = ghosts3(state0, config)
    return (
        bv_x(np.concatenate([[g1], state0.c1]))
        + bv_x(np.concatenate([[g2], state0.c2]))
        + bv_x(np.concatenate([state0.c3, [g3]]))
    )


def combined_flux(state) -> np.ndarray:
    """Transport flux of the conserved density: u - v or c1 + c2 - c3."""
    f = state.fields
    return f[0] - f[1] if len(f) == 2 else f[0] + f[1] - f[2]


def equilibrium_defect(state, het: Heterogeneity, x) -> np.ndarray:
    """Squared pointwise distance to equilibrium (summed over components)."""
    f = state.fields
    if len(f) == 2:
        return (f[0] - het.h(f[1], x)) ** 2
    hc = het.h(f[2], x)
    return (f[1] + hc - 2 * f[0]) ** 2 + (f[0] + hc - 2 * f[1]) ** 2


def equilibrium_deviation(snapshots: Sequence, het: Heterogeneity, grid: Grid) -> float:
    """Space-time L2 norm of the equilibrium defect.

    Trapezoid rule over the snapshot times, cell averages in x.
    """
    if len(snapshots) < 2:
        return 0.0
    x = grid.centers
    ts = np.array([s.t for s in snapshots])
    if np.any(np.diff(ts) <= 0):
        raise DiagnosticsError("snapshot times must increase")
    vals = np.array([equilibrium_defect(s, het, x).sum() * grid.dx for s in snapshots])
    return float(np.sqrt(np.trapezoid(vals, ts)))


def _relax_targets(het: Heterogeneity, grid: Grid, kp: KpProfile):
    """Equilibrium values on the cells and on the two ghost cells.

    Ghost values sit at the ghost-cell centers so that the inflow entropy flux
    is offset from cell 0 by a full cell like every interior flux.
    """
    H = het.h(kp.k, grid.centers)
    gl, gr = kp.k_ghost
    H0 = float(het.h(gl, -0.5 * grid.dx))
    return H, kp.k, H0, gr


def entropy_residual_relax(
    prev, nxt, het: Heterogeneity, grid: Grid, kp: KpProfile, dt: float, ghosts: Sequence[float]
) -> np.ndarray:
    """Per-cell residual of the adapted Kruzkov entropy inequality.

    Entropy ``sum |right - h(k_p)| + |left - k_p|`` with fluxes upwinded in
    the transport directions. ``ghosts`` are the inflow values used by the
    step (right movers at x=0 first, the left mover at x=L last).
    """
    dx = grid.dx
    H, k, H0, kR = _relax_targets(het, grid, kp)
    *right, left = prev.fields
    *right_n, left_n = nxt.fields
    *g_right, g_left = ghosts

    eta_old = sum(np.abs(f - H) for f in right) + np.abs(left - k)
    eta_new = sum(np.abs(f - H) for f in right_n) + np.abs(left_n - k)
    div = np.zeros_like(k)
    for f, g in zip(right, g_right):
        s = np.abs(f - H)
        div += s - np.concatenate([[abs(g - H0)], s[:-1]])
    s = np.abs(left - k)
    div -= np.concatenate([s[1:], [abs(g_left - kR)]]) - s
    return (eta_new - eta_old) / dt + div / dx


def compare_with_limit(relax_state, limit_state, grid: Grid) -> float:
    """L1 distance between the relaxation density and the limit density."""
    rho_relax = relax_state.density
    rho = np.asarray(limit_state.rho)
    if rho_relax.shape != rho.shape or rho.shape != (grid.n_cells,):
        raise DiagnosticsError("relaxation and limit states are on different grids")
    return float(np.abs(rho_relax - rho).sum() * grid.dx)


def fit_order(xs, ys) -> float:
    """Least-squares slope of log(ys) against log(xs)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size < 3 or xs.size != ys.size:
        raise DiagnosticsError("need at least 3 matching points")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise DiagnosticsError("log-log fit needs positive data")
    lx = np.log(xs)
    if np.ptp(lx) < 1e-12:
        raise DiagnosticsError("degenerate spread in xs")
    return float(np.polyfit(lx, np.log(ys), 1)[0])


def p_samples(p_max: float, levels: Sequence[float] = (), n: int = N_P_SAMPLES) -> list[float]:
    """Deterministic, distinct flux levels: an even grid on [0, p_max] plus ``levels``.

    Grid points that coincide with a level are replaced by midpoints of the
    widest remaining gaps, so ``n`` distinct values come back whenever
    ``p_max > 0``.
    """
    top = max(float(p_max), 0.0)
    tol = 1e-12 * max(1.0, top)
    chosen: list[float] = []
    for p in sorted(float(q) for q in levels if q >= 0):
        if not chosen or p - chosen[-1] > tol:
            chosen.append(p)
    chosen = chosen[:n]
    for p in np.linspace(0.0, top, max(n - len(chosen), 0)):
        if all(abs(p - q) > tol for q in chosen):
            chosen.append(float(p))
    chosen.sort()
    while len(chosen) < n and len(chosen) > 1 and top > 0:
        gaps = np.diff(chosen)
        i = int(np.argmax(gaps))
        chosen.insert(i + 1, 0.5 * (chosen[i] + chosen[i + 1]))
    return chosen


def inflow_level(het: Heterogeneity, config, system: System) -> float:
    """Flux level carried in by the boundary data at x = 0."""
    if System(system) is System.TWO:
        return float(config.u0 - invert_h(het, config.u0, 0.0))
    m = config.c01 + config.c02
    return float(m - invert_h(het, 0.5 * m, 0.0))


def equilibrium_flux_levels(state, het: Heterogeneity, grid: Grid) -> np.ndarray:
    """Flux ``w h(v, x) - v`` of the equilibrium attached to the slow field."""
    f = state.fields
    w = 1.0 if len(f) == 2 else 2.0
    return w * het.h(f[-1], grid.centers) - f[-1]


def relax_ceiling(het: Heterogeneity, grid: Grid, config, state0) -> tuple[float, float]:
    """Supersolution ceiling for a 2x2 run and the U0 it was built from.

    U0 dominates the inflow datum and the initial data.
    """
    U0 = float(max(config.u0, np.max(state0.u), np.max(state0.v)))
    profile = solve_stationary_2x2(het, grid, config.epsilon, U0, config.alpha)
    return supersolution_bound(profile, het), U0


@dataclass
class DiagnosticsReport:
    system: str
    epsilon: float
    dt: float
    dx: float
    n_steps: int
    linf: dict[str, float]
    min_value: float
    bv_t_series: list[float]
    bv_t_initial_bound: float
    bv_t_max_increase: float
    bv_x_combined: float
    bv_x_combined_initial: float
    bv_x_combined_max: float
    bv_x_density: float
    bv_x_separate: dict[str, float]
    bv_x_separate_initial: dict[str, float]
    eq_dev_l2: float
    entropy_worst_residual: dict[str, float]
    entropy_tolerance: float
    mass_balance_error: float
    bound_ceiling: float | None
    ceiling_U0: float | None
    ceiling_violated: bool | None
    initial_equilibrium_mismatch: float
    corner_mismatch: float

    @property
    def entropy_worst(self) -> float:
        vals = self.entropy_worst_residual.values()
        return max(vals) if vals else float("-inf")

    def to_dict(self) -> dict:
        return asdict(self)


class RelaxMonitor:
    """Accumulates a :class:`DiagnosticsReport` step by step."""

    def __init__(self, het, grid, config, system, dt, *, p_samples=None, ceiling=None):
        self.het = het
        self.grid = grid
        self.config = config
        self.system = System(system)
        self.dt = dt
        self.p_samples = p_samples
        self.ceiling = ceiling
        self.ceiling_U0 = None
        self.names = ("u", "v") if self.system is System.TWO else ("c1", "c2", "c3")

    def start(self, state0) -> None:
        from .relax import equilibrium_mismatch, ghosts2, ghosts3

        het, grid = self.het, self.grid
        self.state0 = state0
        self.n_steps = 0
        self.linf = {n: float(np.max(f)) for n, f in zip(self.names, state0.fields)}
        self.min_value = float(min(np.min(f) for f in state0.fields))
        self.bv_t = []
        self.bv_t_bound = initial_time_bv_bound(state0, self.config)
        self.bv_comb0 = bv_x(combined_flux(state0))
        self.bv_comb_max = self.bv_comb0
        self.bv_sep0 = {n: bv_x(f) for n, f in zip(self.names, state0.fields)}
        self.defect_prev = float(equilibrium_defect(state0, het, grid.centers).sum() * grid.dx)
        self.eq_int = 0.0
        self.mass_err = 0.0
        self.eq_mismatch0 = equilibrium_mismatch(state0, het, grid)
        if self.system is System.TWO:
            g = ghosts2(state0, self.config)
            self.corner = max(abs(g[0] - state0.u[0]), abs(g[1] - state0.v[-1]))
        else:
            g = ghosts3(state0, self.config)
            self.corner = max(
                abs(g[0] - state0.c1[0]), abs(g[1] - state0.c2[0]), abs(g[2] - state0.c3[-1])
            )

        if self.p_samples is None:
            levels = equilibrium_flux_levels(state0, het, grid)
            p_in = inflow_level(het, self.config, self.system)
            self.p_samples = p_samples(max(float(levels.max()), p_in), [p_in])
        self.kps = [solve_kp(het, grid, p, self.system) for p in self.p_samples]
        self.entropy_worst = {repr(p): -np.inf for p in self.p_samples}

        if self.system is System.TWO and self.ceiling is None:
            self.ceiling, self.ceiling_U0 = relax_ceiling(het, grid, self.config, state0)

    def __call__(self, n, prev, nxt, dt) -> None:
        from .relax import boundary_flux_balance, ghosts2, ghosts3

        grid = self.grid
        self.n_steps += 1
        self.last = nxt
        for name, f in zip(self.names, nxt.fields):
            self.linf[name] = max(self.linf[name], float(np.max(f)))
        self.min_value = min(self.min_value, float(min(np.min(f) for f in nxt.fields)))
        self.bv_t.append(time_bv_step(prev, nxt, dt, grid.dx))
        self.bv_comb_max = max(self.bv_comb_max, bv_x(combined_flux(nxt)))

        d = float(equilibrium_defect(nxt, self.het, grid.centers).sum() * grid.dx)
        self.eq_int += 0.5 * dt * (d + self.defect_prev)
        self.defect_prev = d

        mass = lambda s: sum(float(f.sum()) for f in s.fields) * grid.dx  # noqa: E731
        expected = dt * boundary_flux_balance(prev, self.config)
        self.mass_err = max(self.mass_err, abs(mass(nxt) - mass(prev) - expected))

        ghosts = ghosts2(prev, self.config) if self.system is System.TWO else ghosts3(prev, self.config)
        for p, kp in zip(self.p_samples, self.kps):
            r = float(entropy_residual_relax(prev, nxt, self.het, grid, kp, dt, ghosts).max())
            key = repr(p)
            if r > self.entropy_worst[key]:
                self.entropy_worst[key] = r

    def report(self) -> DiagnosticsReport:
        final = self.last if self.n_steps else self.state0
        bv_t = np.asarray(self.bv_t)
        increase = float(np.max(np.diff(bv_t))) if bv_t.size > 1 else 0.0
        linf_max = max(self.linf.values())
        violated = None if self.ceiling is None else bool(linf_max > self.ceiling + 1e-8)
        return DiagnosticsReport(
            system=self.system.value,
            epsilon=float(self.config.epsilon),
            dt=float(self.dt),
            dx=float(self.grid.dx),
            n_steps=self.n_steps,
            linf=dict(self.linf),
            min_value=self.min_value,
            bv_t_series=[float(b) for b in self.bv_t],
            bv_t_initial_bound=float(self.bv_t_bound),
            bv_t_max_increase=increase,
            bv_x_combined=bv_x(combined_flux(final)),
            bv_x_combined_initial=self.bv_comb0,
            bv_x_combined_max=self.bv_comb_max,
            bv_x_density=bv_x(final.density),
            bv_x_separate={n: bv_x(f) for n, f in zip(self.names, final.fields)},
            bv_x_separate_initial=dict(self.bv_sep0),
            eq_dev_l2=float(np.sqrt(self.eq_int)),
            entropy_worst_residual={k: float(v) for k, v in self.entropy_worst.items()},
            entropy_tolerance=10.0 * (self.grid.dx + self.dt),
            mass_balance_error=float(self.mass_err),
            bound_ceiling=self.ceiling,
            ceiling_U0=self.ceiling_U0,
            ceiling_violated=violated,
            initial_equilibrium_mismatch=self.eq_mismatch0,
            corner_mismatch=float(self.corner),
        )


@dataclass
class SweepResult:
    system: str
    epsilons: list[float]
    reports: list[DiagnosticsReport]
    l1_dist: list[float] = field(default_factory=list)
    eq_dev_order: float | None = None
    l1_order: float | None = None

    @property
    def dissipation_ratio(self) -> list[float]:
        """Observed eq_dev^2 / eps, the constant of the dissipation bound."""
        return [rep.eq_dev_l2**2 / eps for eps, rep in zip(self.epsilons, self.reports)]

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "epsilons": list(self.epsilons),
            "l1_dist": list(self.l1_dist),
            "eq_dev_order": self.eq_dev_order,
            "dissipation_ratio": self.dissipation_ratio,
            "l1_order": self.l1_order,
            "reports": [r.to_dict() for r in self.reports],
        }

    def summary_rows(self) -> list[dict]:
        rows = []
        for i, (eps, rep) in enumerate(zip(self.epsilons, self.reports)):
            rows.append(
                {
                    "eps": eps,
                    "eq_dev": rep.eq_dev_l2,
                    "dissipation_ratio": rep.eq_dev_l2**2 / eps,
                    "l1_dist": self.l1_dist[i] if self.l1_dist else float("nan"),
                    "bvx_combined": rep.bv_x_combined,
                    "bvx_u": rep.bv_x_separate.get("u", rep.bv_x_separate.get("c1")),
                    "order": self.eq_dev_order if self.eq_dev_order is not None else float("nan"),
                }
            )
        return rows
