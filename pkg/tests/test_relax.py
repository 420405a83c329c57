from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from relaxbench.model import Grid, Heterogeneity, ModelError
from relaxbench.relax import (
    Profile,
    RelaxConfig,
    SolverError,
    State2,
    State3,
    initial_state2,
    initial_state3,
    relax2,
    relax3,
    run,
    step_2x2,
    step_3x3,
)
from relaxbench.steady import System

N = 64
X = (np.arange(N) + 0.5) / N
fields = arrays(np.float64, N, elements=st.floats(0.0, 5.0))
taus = st.floats(1e-3, 1e3)
HET = Heterogeneity.smooth_nonlinear(2.5, 0.5, a1=0.5)


# -- relaxation substeps ----------------------------------------------------


def test_relax2_equilibrium_fixed_point():
    v = np.linspace(0.1, 3.0, N)
    u = HET.h(v, X)
    un, vn = relax2(u, v, HET, X, 10.0)
    assert np.max(np.abs(un - u)) <= 1e-12 * max(1.0, u.max())
    assert np.max(np.abs(vn - v)) <= 1e-12 * max(1.0, v.max())


def test_relax3_equilibrium_fixed_point():
    c3 = np.linspace(0.1, 3.0, N)
    c = HET.h(c3, X)
    n1, n2, n3 = relax3(c, c.copy(), c3, HET, X, 10.0)
    for a, b in ((n1, c), (n2, c), (n3, c3)):
        assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, b.max())


@given(u=fields, v=fields, tau=taus)
def test_relax2_conserves_cell_sums(u, v, tau):
    un, vn = relax2(u, v, HET, X, tau)
    assert np.allclose(un + vn, u + v, rtol=4e-16, atol=1e-15)
    assert un.min() >= 0 and vn.min() >= 0


@given(c1=fields, c2=fields, c3=fields, tau=taus)
def test_relax3_conserves_and_decays(c1, c2, c3, tau):
    n1, n2, n3 = relax3(c1, c2, c3, HET, X, tau)
    s = c1 + c2 + c3
    assert np.allclose(n1 + n2 + n3, s, rtol=1e-15, atol=1e-14)
    # d' = -d/eps has the exact solution d e^{-tau}
    d_expected = (c1 - c2) * math.exp(-tau)
    assert np.allclose(n1 - n2, d_expected, rtol=1e-12, atol=1e-14 * max(1.0, s.max()))


@given(c=fields, c3=fields, tau=taus)
def test_relax3_keeps_c1_equal_c2(c, c3, tau):
    n1, n2, _ = relax3(c, c.copy(), c3, HET, X, tau)
    assert np.array_equal(n1, n2)


def test_relax_moves_toward_equilibrium():
    v = np.full(N, 1.0)
    u = np.zeros(N)
    un, vn = relax2(u, v, HET, X, 1.0)
    before = np.abs(u - HET.h(v, X))
    after = np.abs(un - HET.h(vn, X))
    assert np.all(after < before)


# -- full steps ---------------------------------------------------------------


def test_affine_global_steady_state_is_preserved():
    het = Heterogeneity.affine(2.0)
    grid = Grid(1.0, 200)
    cfg = RelaxConfig(epsilon=1e-2, u0=1.0, alpha=0.5, initial=Profile("constant", 0.5))
    state = initial_state2(cfg, het, grid)
    assert np.all(state.u == 1.0)
    nxt = step_2x2(state, het, grid, cfg)
    assert np.max(np.abs(nxt.u - 1.0)) <= 1e-10
    assert np.max(np.abs(nxt.v - 0.5)) <= 1e-10


@pytest.mark.parametrize("cfl", [1.0, 0.6])
def test_one_step_mass_balance(cfl):
    grid = Grid(1.0, 100)
    cfg = RelaxConfig(epsilon=1e-2, cfl=cfl, u0=1.3, alpha=0.4,
                      initial=Profile("cosine", 0.5, amplitude=0.3, periods=1.0))
    s = initial_state2(cfg, HET, grid)
    dt = cfl * grid.dx
    n = step_2x2(s, HET, grid, cfg, dt)
    change = (n.density.sum() - s.density.sum()) * grid.dx
    # upwind fluxes: u enters at 0 and leaves at L, v enters at L and leaves at 0
    u_in, u_out = cfg.u0, s.u[-1]
    v_in, v_out = cfg.alpha * s.u[-1], s.v[0]
    assert change == pytest.approx(dt * (u_in - u_out + v_in - v_out), abs=1e-14)


def test_three_by_three_step_mass_balance():
    grid = Grid(1.0, 100)
    cfg = RelaxConfig(epsilon=1e-2, c01=0.7, c02=1.1, initial=Profile("cosine", 0.4, amplitude=0.2))
    s = initial_state3(cfg, HET, grid)
    dt = grid.dx
    n = step_3x3(s, HET, grid, cfg, dt)
    change = (n.density.sum() - s.density.sum()) * grid.dx
    inflow = cfg.c01 + cfg.c02 + s.c2[-1]
    outflow = s.c1[-1] + s.c2[-1] + s.c3[0]
    assert change == pytest.approx(dt * (inflow - outflow), abs=1e-14)


def test_d_decay_without_transport():
    grid = Grid(1.0, 50)
    cfg = RelaxConfig(epsilon=0.05)
    rng = np.random.default_rng(7)
    s = State3(*(rng.uniform(0.1, 2.0, grid.n_cells) for _ in range(3)))
    dt = 0.013
    n = step_3x3(s, HET, grid, cfg, dt, transport=False)
    ratio = (n.c1 - n.c2) / (s.c1 - s.c2)
    assert np.max(np.abs(ratio / math.exp(-dt / cfg.epsilon) - 1.0)) <= 1e-12


def test_zero_end_time_returns_initial_state():
    grid = Grid(1.0, 50)
    cfg = RelaxConfig(epsilon=1e-2, t_end=0.0, initial=Profile("cosine", 0.4, amplitude=0.1))
    res = run(cfg, HET, grid)
    s0 = initial_state2(cfg, HET, grid)
    assert res.final.t == 0.0
    assert np.array_equal(res.final.u, s0.u) and np.array_equal(res.final.v, s0.v)
    assert res.report.n_steps == 0


def test_run_lands_on_end_time():
    grid = Grid(1.0, 40)
    cfg = RelaxConfig(epsilon=1e-2, t_end=0.333, cfl=0.7)
    res = run(cfg, HET, grid)
    assert res.final.t == 0.333
    tr = res.traces.as_arrays()
    assert len(tr["t"]) == res.report.n_steps + 1
    assert set(tr) == {"t", "u_L", "v_0"}


@pytest.mark.parametrize("eps", [1e-1, 1e-2, 1e-3])
def test_affine_sup_norm_below_supersolution(eps):
    het = Heterogeneity.affine(2.0)
    grid = Grid(1.0, 200)
    cfg = RelaxConfig(epsilon=eps, u0=1.0, alpha=0.5, initial=Profile("cosine", 0.6, amplitude=0.3))
    rep = run(cfg, het, grid).report
    assert rep.bound_ceiling is not None
    assert max(rep.linf.values()) <= rep.bound_ceiling + 1e-8
    # the ceiling uses U0 = max(u0, sup of the sampled initial data)
    s0 = initial_state2(cfg, het, grid)
    assert rep.ceiling_U0 == max(1.0, s0.u.max(), s0.v.max())


def test_time_bv_nonincreasing_for_smooth_data():
    grid = Grid(1.0, 200)
    cfg = RelaxConfig(epsilon=1e-2, u0=1.0, initial=Profile("cosine", 0.4, amplitude=0.1))
    rep = run(cfg, HET, grid).report
    assert np.all(np.diff(rep.bv_t_series) <= 1e-6)
    assert rep.bv_t_max_increase <= 1e-8


@pytest.mark.parametrize("system", list(System))
def test_positivity(system):
    grid = Grid(1.0, 100)
    cfg = RelaxConfig(epsilon=1e-3, u0=0.0, c01=0.0, c02=0.0, initial=Profile("bump", 0.0, amplitude=1.0))
    res = run(cfg, HET, grid, system=system)
    assert res.report.min_value >= -1e-14


def test_relaxation_l1_contraction():
    # monotone scheme with shared boundary data: the L1 gap cannot grow
    grid = Grid(1.0, 100)
    het = HET
    c_a = RelaxConfig(epsilon=1e-2, initial=Profile("cosine", 0.4, amplitude=0.2))
    c_b = RelaxConfig(epsilon=1e-2, initial=Profile("bump", 0.3, amplitude=0.5))
    a, b = initial_state2(c_a, het, grid), initial_state2(c_b, het, grid)
    gap = np.abs(a.u - b.u).sum() + np.abs(a.v - b.v).sum()
    for _ in range(150):
        a, b = step_2x2(a, het, grid, c_a), step_2x2(b, het, grid, c_b)
        new_gap = np.abs(a.u - b.u).sum() + np.abs(a.v - b.v).sum()
        assert new_gap <= gap * (1 + 1e-12) + 1e-14
        gap = new_gap


def test_non_well_prepared_data_are_flagged():
    grid = Grid(1.0, 50)
    cfg = RelaxConfig(epsilon=1e-2, well_prepared=False, initial=Profile("constant", 0.5),
                      initial_u=Profile("constant", 0.2))
    rep = run(cfg, HET, grid).report
    assert rep.initial_equilibrium_mismatch > 0.5


def test_corner_mismatch_reported():
    grid = Grid(1.0, 50)
    cfg = RelaxConfig(epsilon=1e-2, c01=2.0, c02=1.0, initial=Profile("constant", 0.2))
    rep = run(cfg, Heterogeneity.affine(2.0), grid, system=System.THREE).report
    assert rep.corner_mismatch == pytest.approx(2.0 - 0.4)


def test_non_finite_state_is_a_solver_error():
    grid = Grid(1.0, 10)
    s = State2(np.full(10, np.nan), np.zeros(10))
    with pytest.raises(SolverError):
        step_2x2(s, HET, grid, RelaxConfig(epsilon=0.1))


@pytest.mark.parametrize(
    "kwargs",
    [dict(epsilon=0.0), dict(epsilon=1e-2, alpha=1.2), dict(epsilon=1e-2, cfl=1.5),
     dict(epsilon=1e-2, u0=-1.0), dict(epsilon=1e-2, well_prepared=False)],
)
def test_config_validation(kwargs):
    with pytest.raises(ModelError):
        RelaxConfig(**kwargs)


def test_profiles():
    x = np.array([0.0, 0.25, 0.5, 1.0])
    assert Profile("linear", 1.0, amplitude=2.0)(x).tolist() == [1.0, 1.5, 2.0, 3.0]
    assert Profile("step", 1.0, amplitude=1.0, center=0.5)(x).tolist() == [1.0, 1.0, 2.0, 2.0]
    assert Profile("cosine", 0.4, amplitude=0.1)(x)[[0, 2]] == pytest.approx([0.5, 0.4])
    with pytest.raises(ModelError):
        Profile("sawtooth")(x)
