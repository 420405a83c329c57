"""Stationary solutions: the k_p families of the limit laws and the
stationary 2x2 relaxation profile used as a supersolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import brentq

from .model import ConvergenceError, Grid, Heterogeneity, ModelError, solve_increasing

# below this ratio eps/dx the x=L boundary layer is sub-grid
LAYER_RESOLUTION = 1.0 / 50.0


class System(str, Enum):
    TWO = "2x2"
    THREE = "3x3"

    @property
    def weight(self) -> float:
        """Multiplicity of h in the density and flux (1 for 2x2, 2 for 3x3)."""
        return 1.0 if self is System.TWO else 2.0


class BracketError(ModelError):
    """Shooting residual does not change sign on [0, U0]."""


@dataclass(frozen=True)
class KpProfile:
    p: float
    k: np.ndarray
    system: System
    k_left: float
    k_right: float
    k_ghost: tuple[float, float] = (0.0, 0.0)

    def density(self, het: Heterogeneity, grid: Grid) -> np.ndarray:
        """Equilibrium density k + w h(k, x) of the steady state on the cells."""
        return self.k + self.system.weight * het.h(self.k, grid.centers)

    def residual(self, het: Heterogeneity, grid: Grid) -> float:
        w = self.system.weight
        return float(np.max(np.abs(w * het.h(self.k, grid.centers) - self.k - self.p)))


def kp_values(het: Heterogeneity, x, p: float, system: System = System.TWO):
    """Solve ``w h(k, x) - k = p`` pointwise for k >= 0."""
    system = System(system)
    w = system.weight
    slope = w * het.beta - 1.0
    if system is System.TWO and not het.beta > 1:
        raise ModelError(f"2x2 steady states need beta > 1, got {het.beta}")
    if system is System.THREE and het.beta < 1:
        raise ModelError(f"3x3 steady states need beta >= 1, got {het.beta}")
    if p < 0:
        raise ModelError(f"p must be nonnegative (k_p would be negative), got {p}")
    x = np.asarray(x, dtype=float)
    target = np.full_like(x, float(p))
    hi = target / slope + 1.0 if slope > 0 else target + 1.0
    return solve_increasing(
        lambda k: w * het.h(k, x) - k,
        lambda k: w * het.h_v(k, x) - 1.0,
        target,
        0.0,
        hi,
        rtol=1e-13,
    )


def solve_kp(het: Heterogeneity, grid: Grid, p: float, system: System = System.TWO) -> KpProfile:
    system = System(system)
    k = kp_values(het, grid.centers, p, system)
    # x = 0, x = L, and the ghost-cell centers just outside the domain
    xs = np.array([0.0, grid.length, -0.5 * grid.dx, grid.length + 0.5 * grid.dx])
    ends = kp_values(het, xs, p, system)
    return KpProfile(
        p=float(p),
        k=k,
        system=system,
        k_left=float(ends[0]),
        k_right=float(ends[1]),
        k_ghost=(float(ends[2]), float(ends[3])),
    )


@dataclass(frozen=True)
class SteadyProfile:
    U: np.ndarray
    V: np.ndarray
    K: float
    epsilon: float
    U0: float
    alpha: float
    U_L: float
    U_0: float
    shooting_residual: float
    layer_resolved: bool
    roots: tuple[float, ...] = field(default=())

    @property
    def multiple_roots(self) -> bool:
        return len(self.roots) > 1


def _march_backward(het: Heterogeneity, grid: Grid, epsilon: float, K: float, alpha: float):
    """Implicit Euler for ``U' = (h(U - K, x) - U) / eps`` from x = L down to x = 0.

    Integration runs against the growth direction of the ODE, so every step
    is a monotone scalar equation. Nodes are L, the cell centers, and 0.
    Returns (U at cell centers, U(0)).
    """
    x = grid.centers
    dx = grid.dx
    n = grid.n_cells
    U = np.empty(n)
    u_next = K / (1.0 - alpha)
    x_nodes = np.concatenate([x[::-1], [0.0]])
    steps = np.concatenate([[0.5 * dx], np.full(n - 1, dx), [0.5 * dx]])
    for i, (xi, d) in enumerate(zip(x_nodes, steps)):
        lam = d / epsilon
        xi_arr = np.array([xi])

        def g(w, lam=lam, xi_arr=xi_arr):
            return w + lam * (het.h(np.maximum(w - K, 0.0), xi_arr) - w)

        def dg(w, lam=lam, xi_arr=xi_arr):
            return 1.0 + lam * (het.h_v(np.maximum(w - K, 0.0), xi_arr) - 1.0)

        # root satisfies w >= K because g(K) = K (1 - lam) <= u_next
        w = solve_increasing(
            g, dg, np.array([u_next]), K, max(u_next, K) + 1.0, guess=u_next, rtol=1e-11
        )[0]
        if i < n:
            U[n - 1 - i] = w
        u_next = w
    return U, u_next


def _shooting_residual(het, grid, epsilon, K, alpha, U0):
    _, u_at_0 = _march_backward(het, grid, epsilon, K, alpha)
    return u_at_0 - U0


def solve_stationary_2x2(
    het: Heterogeneity,
    grid: Grid,
    epsilon: float,
    U0: float,
    alpha: float,
    *,
    n_scan: int = 8,
) -> SteadyProfile:
    """Stationary 2x2 profile with U(0) = U0 and V(L) = alpha U(L).

    The difference U - V is the constant K. For each trial K the profile is
    integrated from x = L (where U = K / (1 - alpha)) back to x = 0, and K is
    found in [0, U0] as the root of U_K(0) - U0.
    """
    if not U0 > 0:
        raise ModelError(f"U0 must be positive, got {U0}")
    if not 0 < alpha < 1:
        raise ModelError(f"alpha must lie in (0, 1), got {alpha}")
    if not epsilon > 0:
        raise ModelError(f"epsilon must be positive, got {epsilon}")
    if not het.beta > 1:
        raise ModelError(f"2x2 stationary problem needs beta > 1, got {het.beta}")

    def r(K):
        return _shooting_residual(het, grid, epsilon, K, alpha, U0)

    ks = np.linspace(0.0, U0, n_scan + 1)
    rs = np.array([r(k) for k in ks])
    if rs[0] == 0:
        roots = [0.0]
    else:
        roots = []
    for k_lo, k_hi, r_lo, r_hi in zip(ks[:-1], ks[1:], rs[:-1], rs[1:]):
        if r_hi == 0:
            roots.append(float(k_hi))
        elif r_lo * r_hi < 0:
            roots.append(brentq(r, k_lo, k_hi, xtol=1e-15 * U0, rtol=4 * np.finfo(float).eps))
    if not roots:
        raise BracketError(
            f"shooting residual has no sign change on [0, {U0}]: r(0)={rs[0]:.3e}, r(U0)={rs[-1]:.3e}"
        )
    K = roots[0]
    U, u_at_0 = _march_backward(het, grid, epsilon, K, alpha)
    resid = u_at_0 - U0
    if abs(resid) > 1e-10 * U0:
        raise ConvergenceError(f"shooting residual {resid:.3e} above tolerance")
    return SteadyProfile(
        U=U,
        V=U - K,
        K=float(K),
        epsilon=float(epsilon),
        U0=float(U0),
        alpha=float(alpha),
        U_L=float(K / (1.0 - alpha)),
        U_0=float(u_at_0),
        shooting_residual=float(resid),
        layer_resolved=epsilon >= LAYER_RESOLUTION * grid.dx,
        roots=tuple(float(k) for k in roots),
    )


def supersolution_bound(profile: SteadyProfile, het: Heterogeneity) -> float:
    """Uniform ceiling ``max(U0 / (1 - alpha), beta K / (beta - 1), U0)``."""
    beta = het.beta
    interior = beta * profile.K / (beta - 1.0) if beta > 1 else np.inf
    return float(max(profile.U0 / (1.0 - profile.alpha), interior, profile.U0))
