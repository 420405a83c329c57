from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from relaxbench.model import Grid, Heterogeneity

settings.register_profile(
    "suite", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("suite")

REPO = Path(__file__).resolve().parents[1]
CONFIGS = REPO / "configs"


@pytest.fixture
def grid():
    return Grid(1.0, 400)


@pytest.fixture
def affine2():
    return Heterogeneity.affine(2.0)


@pytest.fixture
def smooth():
    """a == 2, c = 0.5: h = 2v + 0.5 v^2/(1+v)."""
    return Heterogeneity.smooth_nonlinear(2.0, 0.5)


@pytest.fixture
def reference_het():
    """Heterogeneous reference: a(x) = 2.5 + 0.5 sin(2 pi x), c = 0.5."""
    return Heterogeneity.smooth_nonlinear(2.5, 0.5, a1=0.5)


def all_families():
    return [
        Heterogeneity.affine(2.0),
        Heterogeneity.affine(2.5, a1=0.5),
        Heterogeneity.smooth_nonlinear(2.0, 0.5),
        Heterogeneity.smooth_nonlinear(2.5, 0.5, a1=0.5),
        Heterogeneity.piecewise_bv([2.0, 2.5], [0.5]),
        Heterogeneity.piecewise_bv([2.0, 3.0, 2.0], [0.3, 0.6], c=0.5),
    ]
