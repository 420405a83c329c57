"""Transport/relaxation splitting for the 2x2 and 3x3 two-velocity systems.

Each step is upwind transport (u, c1, c2 to the right, v, c3 to the left)
followed by an implicit relaxation that is solved exactly per cell through
the conserved sum and, for 3x3, the exponentially decaying difference c1 - c2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .model import ConvergenceError, Grid, Heterogeneity, ModelError, solve_increasing
from .steady import System


class SolverError(RuntimeError):
    """A step failed; carries the time and the offending cells."""

    def __init__(self, message: str, t: float | None = None, cells=None):
        super().__init__(message)
        self.t = t
        self.cells = [] if cells is None else list(cells)


@dataclass(frozen=True)
class Profile:
    """Closed-form initial profile on [0, L].

    kinds: constant, linear, cosine, step, bump.
    """

    kind: str = "constant"
    value: float = 0.5
    amplitude: float = 0.0
    center: float = 0.5
    width: float = 0.1
    periods: float = 0.5

    def __call__(self, x, length: float = 1.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        s = x / length
        if self.kind == "constant":
            out = np.full_like(x, self.value)
        elif self.kind == "linear":
            out = self.value + self.amplitude * s
        elif self.kind == "cosine":
            out = self.value + self.amplitude * np.cos(2.0 * np.pi * self.periods * s)
        elif self.kind == "step":
            out = self.value + self.amplitude * (s >= self.center)
        elif self.kind == "bump":
            out = self.value + self.amplitude * np.exp(-(((s - self.center) / self.width) ** 2))
        else:
            raise ModelError(f"unknown profile kind {self.kind!r}")
        return out.astype(float)


@dataclass(frozen=True)
class State2:
    u: np.ndarray
    v: np.ndarray
    t: float = 0.0

    @property
    def fields(self) -> tuple[np.ndarray, ...]:
        return (self.u, self.v)

    @property
    def density(self) -> np.ndarray:
        return self.u + self.v


@dataclass(frozen=True)
class State3:
    c1: np.ndarray
    c2: np.ndarray
    c3: np.ndarray
    t: float = 0.0

    @property
    def fields(self) -> tuple[np.ndarray, ...]:
        return (self.c1, self.c2, self.c3)

    @property
    def density(self) -> np.ndarray:
        return self.c1 + self.c2 + self.c3


@dataclass(frozen=True)
class RelaxConfig:
    epsilon: float
    t_end: float = 1.0
    cfl: float = 1.0
    u0: float = 1.0
    alpha: float = 0.5
    c01: float = 1.0
    c02: float = 1.0
    initial: Profile = field(default_factory=Profile)
    initial_u: Profile | None = None
    well_prepared: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ModelError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.cfl <= 1:
            raise ModelError(f"cfl must lie in (0, 1], got {self.cfl}")
        if not 0 < self.alpha < 1:
            raise ModelError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.t_end < 0:
            raise ModelError("t_end must be nonnegative")
        if min(self.u0, self.c01, self.c02) < 0:
            raise ModelError("boundary data must be nonnegative")
        if not self.well_prepared and self.initial_u is None:
            raise ModelError("non-well-prepared data need an initial_u profile")

    def time_steps(self, grid: Grid) -> tuple[int, float]:
        """Number of steps and the uniform dt <= cfl dx landing on t_end."""
        if self.t_end == 0:
            return 0, self.cfl * grid.dx
        n = max(1, math.ceil(self.t_end / (self.cfl * grid.dx) - 1e-9))
        return n, self.t_end / n


def initial_state2(config: RelaxConfig, het: Heterogeneity, grid: Grid) -> State2:
    x = grid.centers
    v = config.initial(x, grid.length)
    if config.well_prepared:
        u = het.h(v, x)
    else:
        u = config.initial_u(x, grid.length)
    if np.any(u < 0) or np.any(v < 0):
        raise ModelError("initial data must be nonnegative")
    return State2(u=u, v=v, t=0.0)


def initial_state3(config: RelaxConfig, het: Heterogeneity, grid: Grid) -> State3:
    x = grid.centers
    c3 = config.initial(x, grid.length)
    if config.well_prepared:
        c1 = het.h(c3, x)
    else:
        c1 = config.initial_u(x, grid.length)
    if np.any(c1 < 0) or np.any(c3 < 0):
        raise ModelError("initial data must be nonnegative")
    return State3(c1=c1, c2=c1.copy(), c3=c3, t=0.0)


def equilibrium_mismatch(state, het: Heterogeneity, grid: Grid) -> float:
    """Largest distance of the state from the equilibrium manifold."""
    x = grid.centers
    if isinstance(state, State2):
        return float(np.max(np.abs(state.u - het.h(state.v, x))))
    hc = het.h(state.c3, x)
    return float(max(np.max(np.abs(state.c1 - hc)), np.max(np.abs(state.c2 - hc))))


# -- boundary data -----------------------------------------------------------


def ghosts2(state: State2, config: RelaxConfig) -> tuple[float, float]:
    """Inflow values (u at x=0, v at x=L) seen during a step from ``state``.

    The reflection uses the outgoing trace of u at x = L over the step,
    which for upwind transport is the last cell value.
    """
    return config.u0, config.alpha * float(state.u[-1])


def ghosts3(state: State3, config: RelaxConfig) -> tuple[float, float, float]:
    return config.c01, config.c02, float(state.c2[-1])


def boundary_flux_balance(state, config: RelaxConfig) -> float:
    """Net inflow rate through both ends (inflows minus outflows)."""
    if isinstance(state, State2):
        u_in, v_in = ghosts2(state, config)
        return u_in - float(state.u[-1]) + v_in - float(state.v[0])
    c1_in, c2_in, c3_in = ghosts3(state, config)
    return (
        c1_in + c2_in - float(state.c1[-1]) - float(state.c2[-1]) + c3_in - float(state.c3[0])
    )


def _advect_right(f: np.ndarray, inflow: float, lam: float) -> np.ndarray:
    upstream = np.concatenate([[inflow], f[:-1]])
    if lam == 1.0:
        return upstream
    return f - lam * (f - upstream)


def _advect_left(f: np.ndarray, inflow: float, lam: float) -> np.ndarray:
    upstream = np.concatenate([f[1:], [inflow]])
    if lam == 1.0:
        return upstream
    return f - lam * (f - upstream)


# -- relaxation substeps -----------------------------------------------------


def relax2(u, v, het: Heterogeneity, x, tau: float):
    """Implicit relaxation over ``tau = dt / eps``; conserves u + v per cell.

    Solves ``u_new = u + tau (h(s - u_new, x) - u_new)`` with ``s = u + v``.
    """
    s = u + v

    def f(w):
        return (1.0 + tau) * w - tau * het.h(np.maximum(s - w, 0.0), x)

    def df(w):
        return (1.0 + tau) + tau * het.h_v(np.maximum(s - w, 0.0), x)

    u_new = solve_increasing(f, df, u, 0.0, s, guess=u, scale=tau * s)
    return u_new, s - u_new


def relax3(c1, c2, c3, het: Heterogeneity, x, tau: float):
    """Implicit relaxation of the 3x3 source over ``tau = dt / eps``.

    c1 + c2 + c3 is conserved, c1 - c2 decays by exactly exp(-tau), and c3
    solves ``c3n = c3 + (tau / 3) (s - c3n - 2 h(c3n, x))``.
    """
    s = c1 + c2 + c3
    d = (c1 - c2) * math.exp(-tau)
    t3 = tau / 3.0

    def f(w):
        return (1.0 + t3) * w + 2.0 * t3 * het.h(w, x)

    def df(w):
        return (1.0 + t3) + 2.0 * t3 * het.h_v(w, x)

    c3_new = solve_increasing(f, df, c3 + t3 * s, 0.0, s, guess=c3, scale=t3 * s)
    m = s - c3_new
    return 0.5 * (m + d), 0.5 * (m - d), c3_new


def _checked(solve, t, *args):
    try:
        return solve(*args)
    except ConvergenceError as exc:
        fields = args[:-3]
        bad = np.flatnonzero(~np.all(np.isfinite(np.vstack(fields)), axis=0))
        raise SolverError(f"relaxation solve failed at t={t:.6g}: {exc}", t, bad) from exc


def step_2x2(
    state: State2,
    het: Heterogeneity,
    grid: Grid,
    config: RelaxConfig,
    dt: float | None = None,
    *,
    transport: bool = True,
    relaxation: bool = True,
) -> State2:
    dt = config.cfl * grid.dx if dt is None else dt
    if not np.all(np.isfinite(state.u)) or not np.all(np.isfinite(state.v)):
        raise SolverError("non-finite state", state.t)
    lam = dt / grid.dx
    u, v = state.u, state.v
    if transport:
        u_in, v_in = ghosts2(state, config)
        u, v = _advect_right(u, u_in, lam), _advect_left(v, v_in, lam)
    if relaxation:
        u, v = _checked(relax2, state.t, u, v, het, grid.centers, dt / config.epsilon)
    return State2(u=u, v=v, t=state.t + dt)


def step_3x3(
    state: State3,
    het: Heterogeneity,
    grid: Grid,
    config: RelaxConfig,
    dt: float | None = None,
    *,
    transport: bool = True,
    relaxation: bool = True,
) -> State3:
    dt = config.cfl * grid.dx if dt is None else dt
    if not all(np.all(np.isfinite(f)) for f in state.fields):
        raise SolverError("non-finite state", state.t)
    lam = dt / grid.dx
    c1, c2, c3 = state.fields
    if transport:
        g1, g2, g3 = ghosts3(state, config)
        c1, c2, c3 = (
            _advect_right(c1, g1, lam),
            _advect_right(c2, g2, lam),
            _advect_left(c3, g3, lam),
        )
    if relaxation:
        c1, c2, c3 = _checked(relax3, state.t, c1, c2, c3, het, grid.centers, dt / config.epsilon)
    return State3(c1=c1, c2=c2, c3=c3, t=state.t + dt)


# -- driver ------------------------------------------------------------------


@dataclass
class TraceSeries:
    """Boundary traces at every time level (outgoing values at each end)."""

    times: list[float] = field(default_factory=list)
    values: dict[str, list[float]] = field(default_factory=dict)

    def record(self, t: float, **vals: float) -> None:
        self.times.append(float(t))
        for name, val in vals.items():
            self.values.setdefault(name, []).append(float(val))

    def as_arrays(self) -> dict[str, np.ndarray]:
        out = {"t": np.asarray(self.times)}
        out.update({k: np.asarray(v) for k, v in self.values.items()})
        return out


def _trace(state) -> dict[str, float]:
    if isinstance(state, State2):
        return {"u_L": state.u[-1], "v_0": state.v[0]}
    return {"c1_L": state.c1[-1], "c2_L": state.c2[-1], "c3_0": state.c3[0]}


Observer = Callable[[int, object, object, float], None]


@dataclass
class RunResult:
    final: State2 | State3
    traces: TraceSeries
    report: object
    snapshots: list = field(default_factory=list)


def run(
    config: RelaxConfig,
    het: Heterogeneity,
    grid: Grid,
    observers: Sequence[Observer] = (),
    *,
    system: System = System.TWO,
    p_samples: Sequence[float] | None = None,
    snapshot_every: int | None = None,
    ceiling: float | None = None,
) -> RunResult:
    """Advance from the configured initial data to ``config.t_end``.

    Every observer is called as ``obs(n, prev, next, dt)`` after each step.
    A :class:`~relaxbench.diagnostics.RelaxMonitor` is always attached and its
    report returned.
    """
    from .diagnostics import RelaxMonitor

    system = System(system)
    if system is System.TWO:
        state = initial_state2(config, het, grid)
        step = step_2x2
    else:
        state = initial_state3(config, het, grid)
        step = step_3x3
    n_steps, dt = config.time_steps(grid)

    monitor = RelaxMonitor(het, grid, config, system, dt, p_samples=p_samples, ceiling=ceiling)
    monitor.start(state)
    traces = TraceSeries()
    traces.record(state.t, **_trace(state))
    snapshots = [state] if snapshot_every else []

    for n in range(n_steps):
        nxt = step(state, het, grid, config, dt)
        if n == n_steps - 1:
            nxt = replace(nxt, t=config.t_end)
        monitor(n, state, nxt, dt)
        for obs in observers:
            obs(n, state, nxt, dt)
        traces.record(nxt.t, **_trace(nxt))
        if snapshot_every and ((n + 1) % snapshot_every == 0 or n == n_steps - 1):
            snapshots.append(nxt)
        state = nxt

    return RunResult(final=state, traces=traces, report=monitor.report(), snapshots=snapshots)
