from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from adapt_iter.biot import (FIXED_STRESS, BiotConfig, BiotProblem, StabilizationFamily, assemble_traction,
                             contraction_factor, lame_from_E_nu, traction)
from adapt_iter.engine import Controller, SchemeId, StoppingRule, run_time_step


@pytest.fixture(scope="module")
def coarse():
    return BiotProblem(BiotConfig(n=8))


def test_lame_parameters():
    mu, lam, K = lame_from_E_nu(1e11, 0.2)
    assert mu == pytest.approx(4.16667e10, rel=1e-5)
    assert lam == pytest.approx(2.77778e10, rel=1e-5)
    assert K == pytest.approx(6.94444e10, rel=1e-5)
    with pytest.raises(ValueError):
        lame_from_E_nu(1e11, 0.5)
    with pytest.raises(ValueError):
        lame_from_E_nu(-1.0, 0.2)


def test_stabilization_family_values():
    fam = StabilizationFamily.of(BiotConfig())
    assert fam.L_min == pytest.approx(3.645e-12, rel=1e-10)
    assert fam.L_MW == pytest.approx(5.832e-12, rel=1e-10)
    assert fam.L_1D == pytest.approx(7.29e-12, rel=1e-10)
    assert fam.L_phys == pytest.approx(1.1664e-11, rel=1e-10)
    assert fam.named("L_phys") == fam.L_phys
    assert fam.named("opt", 0.4) == fam.L_1D
    assert fam.named("opt", 0.2) == pytest.approx(2.3 * fam.L_min)


def test_stabilization_family_errors():
    fam = StabilizationFamily.of(BiotConfig())
    with pytest.raises(ValueError):
        fam.named("L_best")
    with pytest.raises(ValueError):
        fam.named("opt", 0.3)


def test_incompressible_grain_limit():
    # lambda -> 0 as nu -> 0, leaving alpha^2 / (4 mu) = alpha^2 / (2E)
    fam = StabilizationFamily.of(BiotConfig(nu=1e-9))
    assert fam.L_min == pytest.approx(0.81 / 2e11, rel=1e-8)


@given(st.floats(0.001, 0.49))
def test_family_ordering(nu):
    fam = StabilizationFamily.of(BiotConfig(nu=nu))
    assert fam.L_min < fam.L_MW < fam.L_phys
    assert fam.L_min < fam.L_1D < fam.L_phys


def test_contraction_factor():
    assert contraction_factor(BiotConfig()) == pytest.approx(0.3932, abs=5e-5)


def test_config_validation():
    with pytest.raises(ValueError):
        BiotConfig(C_inc=1.0)
    with pytest.raises(ValueError):
        BiotConfig(L=-1.0)
    with pytest.raises(ValueError):
        BiotConfig(c0=0.0)


def test_traction_profile():
    assert traction(0.0, 1e10) == 0.0
    assert traction(0.5, 1e10) == 0.0
    assert traction(0.25, 1e10) == pytest.approx(-1e10)


def test_traction_total_force(coarse):
    f = assemble_traction(coarse.V, 0.25, 1e10)
    ey = coarse.V.interpolate(lambda x: np.column_stack([np.zeros(len(x)), np.ones(len(x))]))
    ex = coarse.V.interpolate(lambda x: np.column_stack([np.ones(len(x)), np.zeros(len(x))]))
    assert f @ ey == pytest.approx(-1e10 * 0.5, rel=1e-12)  # top edge has length 1/2
    assert f @ ex == 0.0


def test_coupling_matrices(coarse):
    np.testing.assert_allclose((coarse.G + coarse.Dv.T).toarray(), 0.0, atol=1e-15)
    # -alpha * int_Omega p div u with p = x, u = (x^2, 0): alpha * 2 int x^2 over the L-shape is 0.9 * 3/8
    p = coarse.Q.interpolate(lambda x: x[:, 0])
    u = coarse.V.interpolate(lambda x: np.column_stack([x[:, 0] ** 2, np.zeros(len(x))]))
    assert u @ (coarse.G @ p) == pytest.approx(-0.9 * 0.375, rel=1e-12)


def test_boundary_conditions(coarse):
    qm, vm = coarse.Q.dirichlet_mask, coarse.V.dirichlet_mask
    assert np.all(coarse.Q.dof_coords[qm, 1] == 1.0)
    assert vm.sum() > 0 and not vm.all()


def test_zero_load_gives_zero_solution(coarse):
    s0 = coarse.initial_state()
    ref = coarse.monolithic_solve(s0, 0.0, 0.01)
    assert np.all(ref.p == 0.0) and np.all(ref.u == 0.0)
    coarse.begin_step(s0, 0.0, 0.01)
    ls = coarse.linear_step(FIXED_STRESS, s0, 3.645e-12)
    assert ls.eta_inc == 0.0


def test_step_identity_and_zero_estimators(coarse):
    fam = StabilizationFamily.of(coarse.cfg)
    s = coarse.begin_step(coarse.initial_state(), 0.2, 0.01)
    ls = coarse.linear_step(FIXED_STRESS, s, fam.L_min)
    assert ls.energy == pytest.approx(ls.work, rel=1e-8)
    est, inputs = coarse.estimators(FIXED_STRESS, ls.state, ls.state.copy(), fam.L_min)
    assert est == {"eta_flow": 0.0, "eta_mech": 0.0, "eta_5to5": 0.0}
    assert inputs["inc_self"] == 0.0
    with pytest.raises(ValueError):
        coarse.linear_step(SchemeId.TWOPHASE_L, s, fam.L_min)


@pytest.mark.parametrize("name", ["L_min", "L_phys"])
def test_fixed_stress_reaches_monolithic_step(coarse, name):
    fam = StabilizationFamily.of(coarse.cfg)
    s0 = coarse.initial_state()
    ref = coarse.monolithic_solve(s0, 0.2, 0.01)
    stop = StoppingRule(relative={"p": 1e-10}, max_iter=500, min_iter=2)
    res = run_time_step(coarse, Controller(FIXED_STRESS, fam.named(name)), stop, s0, 0.2, 0.01)
    assert res.converged
    assert coarse.l2(res.state.p - ref.p) <= 1e-8 * coarse.l2(ref.p)
    assert coarse.residual_norm(res.state) <= 1e-6 * np.linalg.norm(coarse.f6)


def test_flow_factor_is_cached(coarse):
    coarse.begin_step(coarse.initial_state(), 0.1, 0.01)
    assert coarse.flow_factor(1e-11) is coarse.flow_factor(1e-11)
