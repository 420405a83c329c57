"""Heterogeneous nonlinearity h(v, x), its derivatives and monotone inversions.

Three closed-form families are provided::

    affine            h = a(x) v
    smooth_nonlinear  h = a(x) v + c v^2 / (1 + v)
    piecewise_bv      h = a(x) v + c v^2 / (1 + v),  a piecewise constant

For the first two families ``a(x) = a0 + a1 sin(2 pi x / L)``; for the last one
``a`` takes the value ``levels[k]`` on the k-th interval cut by ``breaks``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

NONAFFINE_THRESHOLD = 1e-10


class ModelError(ValueError):
    """Invalid heterogeneity parameters or arguments outside the state space."""


class ConvergenceError(RuntimeError):
    """A monotone scalar solve did not reach its tolerance."""


class Family(str, Enum):
    AFFINE = "affine"
    SMOOTH_NONLINEAR = "smooth_nonlinear"
    PIECEWISE_BV = "piecewise_bv"


@dataclass(frozen=True)
class Grid:
    """Uniform mesh of ``n_cells`` cells on ``[0, length]``."""

    length: float = 1.0
    n_cells: int = 400

    def __post_init__(self):
        if not self.length > 0:
            raise ModelError(f"grid length must be positive, got {self.length}")
        if int(self.n_cells) != self.n_cells or self.n_cells < 1:
            raise ModelError(f"n_cells must be a positive integer, got {self.n_cells}")

    @property
    def dx(self) -> float:
        return self.length / self.n_cells

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.dx

    @property
    def faces(self) -> np.ndarray:
        return np.arange(self.n_cells + 1) * self.dx


@dataclass(frozen=True)
class Heterogeneity:
    family: Family = Family.AFFINE
    a0: float = 2.0
    a1: float = 0.0
    c: float = 0.0
    breaks: tuple[float, ...] = ()
    levels: tuple[float, ...] = ()
    length: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "breaks", tuple(float(b) for b in self.breaks))
        object.__setattr__(self, "levels", tuple(float(a) for a in self.levels))
        if not self.length > 0:
            raise ModelError("length must be positive")
        if self.c < 0:
            raise ModelError(f"c must be nonnegative, got {self.c}")
        if self.family is Family.AFFINE and self.c != 0:
            raise ModelError("affine family requires c = 0")
        if self.family is Family.PIECEWISE_BV:
            if len(self.levels) != len(self.breaks) + 1:
                raise ModelError("piecewise_bv needs len(levels) == len(breaks) + 1")
            if any(np.diff(self.breaks) <= 0):
                raise ModelError("breaks must be strictly increasing")
            if self.breaks and not (0 < self.breaks[0] and self.breaks[-1] < self.length):
                raise ModelError("breaks must lie inside (0, L)")
        elif self.breaks or self.levels:
            raise ModelError(f"{self.family.value} takes no breaks/levels")
        if self.beta <= 0:
            raise ModelError(f"dh/dv must stay positive, lower bound is {self.beta}")

    # -- constructors -------------------------------------------------------

    @classmethod
    def affine(cls, a0: float, a1: float = 0.0, length: float = 1.0) -> Heterogeneity:
        return cls(Family.AFFINE, a0=a0, a1=a1, length=length)

    @classmethod
    def smooth_nonlinear(
        cls, a0: float, c: float, a1: float = 0.0, length: float = 1.0
    ) -> Heterogeneity:
        return cls(Family.SMOOTH_NONLINEAR, a0=a0, a1=a1, c=c, length=length)

    @classmethod
    def piecewise_bv(
        cls, levels, breaks, c: float = 0.0, length: float = 1.0
    ) -> Heterogeneity:
        return cls(
            Family.PIECEWISE_BV, c=c, breaks=tuple(breaks), levels=tuple(levels), length=length
        )

    # -- structural constants -----------------------------------------------

    @property
    def a_min(self) -> float:
        if self.family is Family.PIECEWISE_BV:
            return min(self.levels)
        return self.a0 - abs(self.a1)

    @property
    def a_max(self) -> float:
        if self.family is Family.PIECEWISE_BV:
            return max(self.levels)
        return self.a0 + abs(self.a1)

    @property
    def beta(self) -> float:
        """Lower bound of dh/dv over v >= 0."""
        return self.a_min

    @property
    def mu(self) -> float:
        """Upper bound of dh/dv (supremum, attained only as v -> inf when c > 0)."""
        return self.a_max + self.c

    # -- closed forms (no domain checks, vectorised) ------------------------

    def a(self, x):
        x = np.asarray(x, dtype=float)
        if self.family is Family.PIECEWISE_BV:
            idx = np.searchsorted(np.asarray(self.breaks), x, side="left")
            return np.asarray(self.levels)[idx]
        if self.a1 == 0.0:
            return np.full_like(x, self.a0)
        return self.a0 + self.a1 * np.sin(2.0 * np.pi * x / self.length)

    def h(self, v, x):
        v = np.asarray(v, dtype=float)
        out = self.a(x) * v
        if self.c:
            out = out + self.c * v * v / (1.0 + v)
        return out

    def h_v(self, v, x):
        v = np.asarray(v, dtype=float)
        out = self.a(x) + 0.0 * v
        if self.c:
            out = out + self.c * (1.0 - 1.0 / (1.0 + v) ** 2)
        return out

    def h_vv(self, v, x):
        v = np.asarray(v, dtype=float)
        return 2.0 * self.c / (1.0 + v) ** 3 + 0.0 * self.a(x)


@dataclass
class ModelValidationReport:
    beta_observed: float
    mu_observed: float
    hx_l1: float
    zero_at_origin_ok: bool
    nonaffine_ok: bool
    beta_declared: float
    mu_declared: float
    nonaffine_threshold: float = NONAFFINE_THRESHOLD
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def solve_increasing(
    func: Callable,
    dfunc: Callable,
    target,
    lo,
    hi,
    *,
    rtol: float = 1e-12,
    scale=None,
    guess=None,
    maxiter: int = 200,
):
    """Vectorised safeguarded Newton for ``func(w) = target`` with func increasing.

    ``[lo, hi]`` must bracket the root; ``hi`` is doubled until it does. Newton
    steps leaving the current bracket are replaced by bisection. The final
    residual must be below ``rtol * max(1, |target|, scale)``.
    """
    target = np.asarray(target, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), target.shape).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), target.shape).copy()
    lo0 = lo.copy()
    for _ in range(200):
        short = func(hi) < target
        if not np.any(short):
            break
        lo = np.where(short, hi, lo)
        hi = np.where(short, 2.0 * hi + 1.0, hi)
    else:
        raise ConvergenceError("could not bracket the root")

    w = 0.5 * (lo + hi)
    if guess is not None:
        guess = np.broadcast_to(np.asarray(guess, dtype=float), target.shape)
        w = np.where((guess >= lo) & (guess <= hi), guess, w)
    scale = np.maximum(1.0, np.abs(target) if scale is None else np.maximum(np.abs(target), scale))
    for _ in range(maxiter):
        r = func(w) - target
        lo = np.where(r < 0, w, lo)
        hi = np.where(r > 0, w, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            w_new = w - r / dfunc(w)
        bad = ~np.isfinite(w_new) | (w_new < lo) | (w_new > hi)
        w_new = np.where(bad, 0.5 * (lo + hi), w_new)
        w_new = np.where(r == 0, w, w_new)
        step = np.abs(w_new - w)
        w = w_new
        if np.all(step <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(w))):
            break
    else:
        raise ConvergenceError("monotone solve hit the iteration cap")
    resid = np.abs(func(w) - target)
    if np.any(resid > rtol * scale):
        raise ConvergenceError(f"residual {resid.max():.3e} above tolerance")
    # an exact hit on the lower end (e.g. h(0) = 0) beats a round-off neighbour
    return np.where(func(lo0) == target, lo0, w)


def _check_domain(het: Heterogeneity, v, x, name="v"):
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(v < 0):
        raise ModelError(f"{name} must be nonnegative")
    if np.any((x < 0) | (x > het.length)):
        raise ModelError(f"x outside [0, {het.length}]")
    return v, x


def _as_output(value, *inputs):
    if all(np.ndim(a) == 0 for a in inputs):
        return float(value)
    return value


def eval_h(het: Heterogeneity, v, x):
    v, x = _check_domain(het, v, x)
    return _as_output(het.h(v, x), v, x)


def eval_h_v(het: Heterogeneity, v, x):
    v, x = _check_domain(het, v, x)
    return _as_output(het.h_v(v, x), v, x)


def invert_h(het: Heterogeneity, u, x):
    """Return v >= 0 with h(v, x) = u."""
    u, x = _check_domain(het, u, x, "u")
    u_b, x_b = np.broadcast_arrays(u, x)
    v = solve_increasing(
        lambda w: het.h(w, x_b), lambda w: het.h_v(w, x_b), u_b, 0.0, u_b / het.beta + 1.0
    )
    return _as_output(v, u, x)


def invert_rho(het: Heterogeneity, rho, x, weight: float = 1.0):
    """Return v >= 0 with ``weight * h(v, x) + v = rho``.

    ``weight=1`` is the 2x2 density, ``weight=2`` the 3x3 one.
    """
    rho, x = _check_domain(het, rho, x, "rho")
    r_b, x_b = np.broadcast_arrays(rho, x)
    v = solve_increasing(
        lambda w: weight * het.h(w, x_b) + w,
        lambda w: weight * het.h_v(w, x_b) + 1.0,
        r_b,
        0.0,
        r_b / (weight * het.beta + 1.0) + 1.0,
    )
    return _as_output(v, rho, x)


def invert_rho2(het: Heterogeneity, rho, x):
    return invert_rho(het, rho, x, weight=1.0)


def invert_rho3(het: Heterogeneity, rho, x):
    return invert_rho(het, rho, x, weight=2.0)


def validate_assumptions(
    het: Heterogeneity, grid: Grid, v_max: float, n_v_samples: int
) -> ModelValidationReport:
    """Sample dh/dv on [0, v_max] x grid and check the structural assumptions.

    The x-variation of h is measured as a total-variation sum over
    ``[0, cell centers, L]``, which is exact for piecewise constant a(x).
    """
    if not v_max > 0:
        raise ModelError("v_max must be positive")
    if n_v_samples < 2:
        raise ModelError("n_v_samples must be >= 2")
    vs = np.linspace(0.0, v_max, n_v_samples)
    xs = grid.centers
    V, X = np.meshgrid(vs, xs, indexing="ij")
    slopes = het.h_v(V, X)
    beta_obs = float(slopes.min())
    mu_obs = float(slopes.max())

    nodes = np.concatenate([[0.0], xs, [grid.length]])
    Vn, Xn = np.meshgrid(vs, nodes, indexing="ij")
    tv = np.abs(np.diff(het.h(Vn, Xn), axis=1)).sum(axis=1)
    hx_l1 = float(tv.max())

    zero_ok = bool(np.all(het.h(np.zeros_like(nodes), nodes) == 0.0))
    hv = het.h(V, X)
    second = np.abs(hv[2:] - 2.0 * hv[1:-1] + hv[:-2]) if n_v_samples >= 3 else np.zeros(1)
    nonaffine_ok = bool(np.any(second > NONAFFINE_THRESHOLD))

    violations = []
    if beta_obs < het.beta - 1e-9:
        violations.append(f"dh/dv = {beta_obs:.6g} below declared beta {het.beta:.6g}")
    if mu_obs > het.mu + 1e-9:
        violations.append(f"dh/dv = {mu_obs:.6g} above declared mu {het.mu:.6g}")
    if not zero_ok:
        violations.append("h(0, x) != 0")
    if het.family is not Family.AFFINE and not nonaffine_ok:
        violations.append("h(., x) looks affine on every sampled triple")
    return ModelValidationReport(
        beta_observed=beta_obs,
        mu_observed=mu_obs,
        hx_l1=hx_l1,
        zero_at_origin_ok=zero_ok,
        nonaffine_ok=nonaffine_ok,
        beta_declared=het.beta,
        mu_declared=het.mu,
        violations=violations,
    )
