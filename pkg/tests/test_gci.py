import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from attitude_hydro.errors import DegenerateWeight
from attitude_hydro.gci import (
    MARGIN_CONSTANT,
    ThetaGrid,
    compute_c1,
    compute_c2_c3_c4,
    compute_coefficients,
    find_positive_margin,
    gci_construct,
    gci_verify,
    project_tangent_constraint,
    psi0_ode_residual,
    solve_psi0,
    stability_margin,
)
from attitude_hydro.so3 import random_antisymmetric, random_rotation, tangent_projection
from attitude_hydro.vmf import VmfParams, flux_lambda, vmf_density


@pytest.fixture(scope="module")
def psi0(params):
    return solve_psi0(params)


def test_psi0_residual_and_sign(psi0):
    assert psi0.residual < 1e-8
    assert psi0_ode_residual(psi0) < 1e-6
    assert psi0.sign == -1
    assert np.all(np.isfinite(psi0.psi(np.array([0.0, 1.0, np.pi]))))


def test_psi0_second_order(params):
    u = [solve_psi0(params, n).u for n in (256, 512, 1024)]
    e1 = np.max(np.abs(u[0] - u[1][::2]))
    e2 = np.max(np.abs(u[1][::2] - u[2][::4]))
    assert np.log2(e1 / e2) == pytest.approx(2.0, abs=0.15)


def test_psi0_needs_enough_nodes(params):
    with pytest.raises(ValueError):
        solve_psi0(params, 32)


@pytest.mark.parametrize("kappa", [0.25, 1.0, 3.0])
def test_psi0_sign_is_negative(kappa):
    assert solve_psi0(VmfParams(kappa, 1.0), 1024).sign == -1


def test_psi_bar_is_psi_of_angle(psi0):
    th = np.linspace(0.1, 3.0, 7)
    np.testing.assert_allclose(psi0.psi_bar(0.5 + np.cos(th)), psi0.psi(th), rtol=1e-12)


def test_c1_in_unit_interval_and_increasing():
    c = [compute_c1(VmfParams(k, 1.0)) for k in (0.1, 0.5, 1.0, 2.0, 4.0, 8.0)]
    assert all(0 < x < 1 for x in c)
    assert np.all(np.diff(c) > 0)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.2, 5.0))
def test_c3_is_inverse_concentration(kappa):
    p = VmfParams(kappa, 1.0)
    _, c3, _ = compute_c2_c3_c4(p, solve_psi0(p, 512))
    assert c3 == pytest.approx(1.0 / kappa, rel=1e-12)


def test_reference_coefficients(params, psi0):
    c2, c3, c4 = compute_c2_c3_c4(params, psi0)
    assert compute_c1(params) == pytest.approx(0.2042170943, rel=1e-9)
    assert c2 == pytest.approx(0.347787527, rel=1e-6)
    assert c3 == pytest.approx(1.0, rel=1e-12)
    assert c4 == pytest.approx(0.217404158, rel=1e-6)


def test_degenerate_weight():
    tg = ThetaGrid.gauss(50)
    with pytest.raises(DegenerateWeight):
        tg.average(np.ones(50), np.zeros(50))


def test_tangent_constraint_projection(grid, params, rng):
    L0 = random_rotation(rng)
    f = vmf_density(params, L0, grid) * rng.standard_normal((4, grid.size))
    fc = project_tangent_constraint(grid, L0, f)
    np.testing.assert_allclose(tangent_projection(L0, flux_lambda(grid, fc)), 0.0, atol=1e-14)


def test_gci_requires_antisymmetric(grid, psi0):
    with pytest.raises(ValueError):
        gci_construct(np.eye(3), np.eye(3), psi0, grid)


def test_gci_orthogonality(grid, ops, params, psi0, rng):
    rep = gci_verify(grid, random_rotation(rng), params, psi0, rng, n_f=20, ops=ops)
    assert rep.passed
    assert rep.max_constrained < 1e-5
    assert rep.witness > 1e-3


def test_gci_orthogonality_fails_for_wrong_psi(grid, ops, params, psi0, rng):
    """Flipping the sign of psi0 breaks orthogonality: the check has teeth."""
    wrong = type(psi0)(params=params, theta=psi0.theta, u=-psi0.u + 0.1 * np.sin(psi0.theta), residual=0.0,
                       sign=1)
    L0 = random_rotation(rng)
    P = random_antisymmetric(rng)
    M = vmf_density(params, L0, grid)
    f = project_tangent_constraint(grid, L0, M * rng.standard_normal(grid.size))
    Lf = ops.fokker_planck(f, M, params.d)
    good = abs(np.sum(grid.weights * Lf * gci_construct(L0, P, psi0, grid)))
    bad = abs(np.sum(grid.weights * Lf * gci_construct(L0, P, wrong, grid)))
    assert bad > 1e3 * good


def test_stability_margin_formula(params):
    assert stability_margin(1.0, params, 0.5, 2.0) == pytest.approx(1.0 - MARGIN_CONSTANT / 1.0)
    with pytest.raises(ValueError):
        stability_margin(1.0, params, 0.0, 2.0)


def test_positive_margin_search():
    # with the measured order of magnitude of lambda0 no concentration works
    assert find_positive_margin(1.0, lambda k: 2.0) is None
    # a synthetic, very large gap makes the search succeed and bisect
    d, m = find_positive_margin(1.0, lambda k: 1e4 * k)
    assert m > 0 and d > 0


def test_coefficient_set(params, grid):
    co = compute_coefficients(params, grid)
    assert co.lambda0 == pytest.approx(1.6869079, abs=1e-6)
    assert co.d_star == pytest.approx(stability_margin(1.0, params, co.c1, co.lambda0))
    assert not co.margin_positive
