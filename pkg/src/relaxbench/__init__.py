"""Numerical verification suite for heterogeneous hyperbolic relaxation
systems and their scalar conservation-law limits."""

from __future__ import annotations

__version__ = "0.1.0"

from .model import Family, Grid, Heterogeneity, ModelError, ConvergenceError  # noqa: E402
from .steady import System, solve_kp, solve_stationary_2x2  # noqa: E402
from .relax import Profile, RelaxConfig, run  # noqa: E402
from .limit import LimitConfig, run_limit  # noqa: E402

__all__ = [
    "__version__",
    "ConvergenceError",
    "Family",
    "Grid",
    "Heterogeneity",
    "LimitConfig",
    "ModelError",
    "Profile",
    "RelaxConfig",
    "System",
    "run",
    "run_limit",
    "solve_kp",
    "solve_stationary_2x2",
]
