"""Well-balanced upwind solver for the limiting heterogeneous scalar laws

    d/dt rho + d/dx A(rho, x) = 0,

with ``rho = w h(v, x) + v`` and ``A = w h(v, x) - v`` (w = 1 for the 2x2
limit, w = 2 for the 3x3 one). Characteristic speeds are strictly positive,
so the interface flux at j+1/2 is ``A(rho_j, x_j)`` and the outflow at x = L
is free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import Grid, Heterogeneity, ModelError, invert_h, invert_rho
from .relax import Profile, SolverError
from .steady import KpProfile, System, kp_values, solve_kp


class CFLError(SolverError):
    pass


@dataclass(frozen=True)
class LimitState:
    rho: np.ndarray
    t: float = 0.0
    system: System = System.TWO

    @property
    def density(self) -> np.ndarray:
        return self.rho


@dataclass(frozen=True)
class LimitConfig:
    system: System = System.TWO
    t_end: float = 1.0
    cfl: float = 0.9
    u0: float = 1.0
    c01: float = 1.0
    c02: float = 1.0
    initial: Profile = field(default_factory=Profile)
    rho_in: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "system", System(self.system))
        if not 0 < self.cfl <= 1:
            raise ModelError(f"cfl must lie in (0, 1], got {self.cfl}")
        if self.t_end < 0:
            raise ModelError("t_end must be nonnegative")

    def time_steps(self, het: Heterogeneity, grid: Grid) -> tuple[int, float]:
        dt_max = self.cfl * grid.dx / max_speed(het, self.system)
        if self.t_end == 0:
            return 0, dt_max
        n = max(1, math.ceil(self.t_end / dt_max - 1e-9))
        return n, self.t_end / n


def max_speed(het: Heterogeneity, system: System) -> float:
    """Analytic bound (w mu - 1) / (w mu + 1) on dA/drho."""
    w = System(system).weight
    return (w * het.mu - 1.0) / (w * het.mu + 1.0)


def inflow_density(het: Heterogeneity, config: LimitConfig) -> float:
    """Boundary density at x = 0 implied by the relaxation inflow data."""
    if config.rho_in is not None:
        return float(config.rho_in)
    if config.system is System.TWO:
        return float(config.u0 + invert_h(het, config.u0, 0.0))
    m = config.c01 + config.c02
    return float(m + invert_h(het, 0.5 * m, 0.0))


def _unchecked_flux(het: Heterogeneity, rho, x, system: System):
    w = system.weight
    v = invert_rho(het, rho, x, weight=w)
    return w * het.h(v, x) - v


def flux(het: Heterogeneity, rho, x, system: System = System.TWO):
    """A(rho, x) = w h(v, x) - v with v recovered from rho."""
    system = System(system)
    out = _unchecked_flux(het, rho, x, system)
    if np.ndim(rho) == 0 and np.ndim(x) == 0:
        return float(out)
    return out


def density_at_flux(het: Heterogeneity, level, x, system: System = System.TWO):
    """Inverse of ``flux`` in rho: the equilibrium density carrying ``level``."""
    system = System(system)
    k = kp_values(het, np.atleast_1d(np.asarray(x, dtype=float)), float(level), system)
    rho = k + system.weight * het.h(k, x)
    return float(rho[0]) if np.ndim(x) == 0 else rho


def initial_limit_state(config: LimitConfig, het: Heterogeneity, grid: Grid) -> LimitState:
    """Equilibrium density built from the slow-field profile (v or C3)."""
    x = grid.centers
    v = config.initial(x, grid.length)
    rho = v + config.system.weight * het.h(v, x)
    return LimitState(rho=rho, t=0.0, system=config.system)


def interface_fluxes(state: LimitState, het: Heterogeneity, grid: Grid, rho_in: float) -> np.ndarray:
    """Fluxes at the n + 1 faces, inflow face first."""
    inner = _unchecked_flux(het, state.rho, grid.centers, state.system)
    f_in = _unchecked_flux(het, np.array([rho_in]), np.array([0.0]), state.system)
    return np.concatenate([f_in, inner])


def step_limit(
    state: LimitState,
    het: Heterogeneity,
    grid: Grid,
    dt: float,
    rho_in: float,
    *,
    fluxes: np.ndarray | None = None,
) -> LimitState:
    courant = dt * max_speed(het, state.system) / grid.dx
    if courant > 1.0 + 1e-12:
        raise CFLError(f"CFL number {courant:.4f} exceeds 1", state.t)
    if np.any(state.rho < 0):
        raise SolverError("negative density", state.t, np.flatnonzero(state.rho < 0))
    F = interface_fluxes(state, het, grid, rho_in) if fluxes is None else fluxes
    rho = state.rho - (dt / grid.dx) * np.diff(F)
    return LimitState(rho=rho, t=state.t + dt, system=state.system)


def entropy_residual_limit(
    before: LimitState,
    after: LimitState,
    het: Heterogeneity,
    grid: Grid,
    dt: float,
    kp: KpProfile,
    rho_in: float,
    *,
    fluxes: np.ndarray | None = None,
    rho_p: np.ndarray | None = None,
) -> np.ndarray:
    """Per-cell residual of the adapted Kruzkov inequality for the limit law.

    ``eta = |rho - rho_p(x)|`` and ``q = |A(rho, x) - p|`` with rho_p the
    density of the steady state k_p. ``fluxes`` and ``rho_p`` may be passed
    in when already computed.
    """
    if rho_p is None:
        rho_p = kp.density(het, grid)
    F = interface_fluxes(before, het, grid, rho_in) if fluxes is None else fluxes
    q = np.abs(F - kp.p)
    eta_old = np.abs(before.rho - rho_p)
    eta_new = np.abs(after.rho - rho_p)
    return (eta_new - eta_old) / dt + np.diff(q) / grid.dx


@dataclass
class LimitReport:
    system: str
    dt: float
    dx: float
    n_steps: int
    rho_in: float
    p_samples: list[float]
    entropy_worst_residual: dict[str, float]
    entropy_tolerance: float
    min_rho: float
    max_rho: float
    flux_range_initial: tuple[float, float]
    flux_range_final: tuple[float, float]

    @property
    def entropy_worst(self) -> float:
        return max(self.entropy_worst_residual.values()) if self.entropy_worst_residual else -np.inf

    def to_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)


@dataclass
class LimitRunResult:
    final: LimitState
    times: np.ndarray
    rho_trace_0: np.ndarray
    rho_trace_L: np.ndarray
    report: LimitReport
    snapshots: list = field(default_factory=list)


def run_limit(
    config: LimitConfig,
    het: Heterogeneity,
    grid: Grid,
    *,
    p_samples: Sequence[float] | None = None,
    snapshot_every: int | None = None,
    initial: LimitState | None = None,
) -> LimitRunResult:
    """Advance the limit law to ``config.t_end`` checking entropy residuals.

    Boundary traces are interface traces: the density that carries the
    numerical flux through x = 0 and x = L.
    """
    from .diagnostics import p_samples as make_p_samples

    system = config.system
    state = initial if initial is not None else initial_limit_state(config, het, grid)
    rho_in = inflow_density(het, config)
    n_steps, dt = config.time_steps(het, grid)

    F0 = interface_fluxes(state, het, grid, rho_in)
    if p_samples is None:
        p_samples = make_p_samples(float(F0.max()), [float(F0[0])])
    kps = [solve_kp(het, grid, p, system) for p in p_samples]
    rho_ps = [kp.density(het, grid) for kp in kps]
    worst = {repr(p): -np.inf for p in p_samples}

    times = [state.t]
    tr0, trL = [], []

    def record_traces(F):
        tr0.append(density_at_flux(het, F[0], 0.0, system))
        trL.append(density_at_flux(het, F[-1], grid.length, system))

    record_traces(F0)
    F = F0
    snapshots = [state] if snapshot_every else []
    min_rho = float(state.rho.min())
    max_rho = float(state.rho.max())
    for n in range(n_steps):
        nxt = step_limit(state, het, grid, dt, rho_in, fluxes=F)
        if n == n_steps - 1:
            nxt = LimitState(rho=nxt.rho, t=config.t_end, system=system)
        for p, kp, rho_p in zip(p_samples, kps, rho_ps):
            r = entropy_residual_limit(
                state, nxt, het, grid, dt, kp, rho_in, fluxes=F, rho_p=rho_p
            ).max()
            worst[repr(p)] = max(worst[repr(p)], float(r))
        state = nxt
        min_rho = min(min_rho, float(state.rho.min()))
        max_rho = max(max_rho, float(state.rho.max()))
        times.append(state.t)
        F = interface_fluxes(state, het, grid, rho_in)
        record_traces(F)
        if snapshot_every and ((n + 1) % snapshot_every == 0 or n == n_steps - 1):
            snapshots.append(state)

    F_end = F
    report = LimitReport(
        system=system.value,
        dt=float(dt),
        dx=float(grid.dx),
        n_steps=n_steps,
        rho_in=rho_in,
        p_samples=[float(p) for p in p_samples],
        entropy_worst_residual={k: float(v) for k, v in worst.items()},
        entropy_tolerance=10.0 * (grid.dx + dt),
        min_rho=min_rho,
        max_rho=max_rho,
        flux_range_initial=(float(F0[1:].min()), float(F0[1:].max())),
        flux_range_final=(float(F_end[1:].min()), float(F_end[1:].max())),
    )
    return LimitRunResult(
        final=state,
        times=np.asarray(times),
        rho_trace_0=np.asarray(tr0),
        rho_trace_L=np.asarray(trL),
        report=report,
        snapshots=snapshots,
    )


# -- boundary entropy conditions ------------------------------------------------


@dataclass
class BLNReport:
    system: str
    p_samples: list[float]
    worst_violation_0: float
    worst_violation_L: float
    margin_L: float
    applicable_0: dict[str, int]
    applicable_L: dict[str, int]
    per_p_violation_0: dict[str, float]
    per_p_violation_L: dict[str, float]
    not_applicable: list[str]
    n_times: int

    @property
    def worst_violation(self) -> float:
        return max(self.worst_violation_0, self.worst_violation_L)

    def to_dict(self) -> dict:
        from dataclasses import asdict

        out = asdict(self)
        out["worst_violation"] = self.worst_violation
        return out


def _in_open_interval(x, a, b):
    return (np.minimum(a, b) < x) & (x < np.maximum(a, b))


def bln_check(
    times,
    rho_trace_0,
    rho_trace_L,
    w_L,
    het: Heterogeneity,
    p_samples: Sequence[float],
    *,
    system: System = System.THREE,
    rho_boundary_0: float,
) -> BLNReport:
    """Evaluate the boundary entropy sign conditions at both ends.

    At x = 0, for each p whose steady density lies strictly between the trace
    and the boundary density, ``sign(rho - rho_b)(A(rho, 0) - p) <= 0`` is
    required. At x = L the reference density is built from ``w_L`` (the fast
    field's outgoing trace of the relaxation system) and the sign condition is
    ``>= 0``. Violations are reported as positive magnitudes.
    """
    system = System(system)
    w = system.weight
    times = np.asarray(times, dtype=float)
    r0 = np.asarray(rho_trace_0, dtype=float)
    rL = np.asarray(rho_trace_L, dtype=float)
    wL = np.asarray(w_L, dtype=float)
    if not (times.shape == r0.shape == rL.shape == wL.shape):
        raise ValueError("trace series must share the time axis")

    if system is System.TWO:
        rho_w = wL + invert_h(het, wL, np.full_like(wL, het.length))
    else:
        rho_w = w * wL + invert_h(het, wL, np.full_like(wL, het.length))
    A0 = _unchecked_flux(het, r0, np.zeros_like(r0), system)
    AL = _unchecked_flux(het, rL, np.full_like(rL, het.length), system)

    per0, perL, app0, appL, na = {}, {}, {}, {}, []
    margin_L = np.inf
    for p in p_samples:
        key = repr(float(p))
        k0, kL = kp_values(het, np.array([0.0, het.length]), float(p), system)
        rp0 = k0 + w * het.h(k0, 0.0)
        rpL = kL + w * het.h(kL, het.length)
        m0 = _in_open_interval(rp0, r0, rho_boundary_0)
        mL = _in_open_interval(rpL, rL, rho_w)
        s0 = np.sign(r0 - rho_boundary_0) * (A0 - p)
        sL = np.sign(rL - rho_w) * (AL - p)
        per0[key] = float(np.max(np.where(m0, np.maximum(s0, 0.0), 0.0), initial=0.0))
        perL[key] = float(np.max(np.where(mL, np.maximum(-sL, 0.0), 0.0), initial=0.0))
        app0[key] = int(m0.sum())
        appL[key] = int(mL.sum())
        if mL.any():
            margin_L = min(margin_L, float(sL[mL].min()))
        if not m0.any() and not mL.any():
            na.append(key)
    return BLNReport(
        system=system.value,
        p_samples=[float(p) for p in p_samples],
        worst_violation_0=max(per0.values(), default=0.0),
        worst_violation_L=max(perL.values(), default=0.0),
        margin_L=float(margin_L) if np.isfinite(margin_L) else 0.0,
        applicable_0=app0,
        applicable_L=appL,
        per_p_violation_0=per0,
        per_p_violation_L=perL,
        not_applicable=na,
        n_times=int(times.size),
    )
