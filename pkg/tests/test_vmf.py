import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from attitude_hydro.errors import QuadratureMismatch
from attitude_hydro.gci import compute_c1
from attitude_hydro.field import integrate
from attitude_hydro.so3 import polar_decompose, random_rotation
from attitude_hydro.vmf import (
    VmfParams,
    attitude_derivatives,
    attitude_derivatives_as_displayed,
    flux_lambda,
    mean_attitude,
    vmf_density,
    vmf_normalizer,
    weyl_integral,
)


@pytest.mark.parametrize("nu0,d", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0), (1.0, np.inf)])
def test_params_validated(nu0, d):
    with pytest.raises(ValueError):
        VmfParams(nu0, d)


def test_weyl_density_is_normalized():
    assert weyl_integral(lambda t: np.ones_like(t)) == pytest.approx(1.0, abs=1e-13)
    # mean of cos(theta) under the Haar angle law is -1/2
    assert weyl_integral(np.cos) == pytest.approx(-0.5, abs=1e-13)


@pytest.mark.parametrize("kappa", [0.5, 1.0, 2.0, 4.0])
def test_normalizer_matches_grid(grid, kappa):
    p = VmfParams(kappa, 1.0)
    assert vmf_normalizer(p, grid) == pytest.approx(p.Z, rel=1e-6)


def test_coarse_grid_detected(small_grid):
    with pytest.raises(QuadratureMismatch):
        vmf_normalizer(VmfParams(20.0, 1.0), small_grid)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.2, 4.0))
def test_density_normalized_and_flux_aligned(grid, seed, kappa):
    p = VmfParams(kappa, 1.0)
    L = random_rotation(np.random.default_rng(seed))
    M = vmf_density(p, L, grid)
    assert integrate(grid, M) == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(flux_lambda(grid, M), compute_c1(p) * L, atol=1e-7)
    np.testing.assert_allclose(mean_attitude(grid, M), L, atol=1e-7)


def test_density_batches(grid, params, rng):
    L = random_rotation(rng, (2, 3))
    M = vmf_density(params, L, grid)
    assert M.shape == (2, 3, grid.size)
    np.testing.assert_allclose(M[1, 2], vmf_density(params, L[1, 2], grid))


def test_attitude_derivatives_match_differences(grid, params, rng):
    c1 = compute_c1(params)
    L0 = random_rotation(rng)
    M = vmf_density(params, L0, grid)
    rho0 = 1.3
    f1 = M * rng.standard_normal(grid.size) * 0.5
    first, second = attitude_derivatives(grid, rho0, L0, f1, c1)
    lam = lambda e: polar_decompose(flux_lambda(grid, rho0 * M + e * f1))
    h = 1e-3
    np.testing.assert_allclose((lam(h) - lam(-h)) / (2 * h), first, atol=1e-6)
    np.testing.assert_allclose((lam(h) - 2 * lam(0) + lam(-h)) / h**2, second, atol=1e-4)
    displayed = attitude_derivatives_as_displayed(grid, rho0, L0, f1, c1)
    assert np.max(np.abs(displayed - second)) > 1e-3


def test_first_derivative_is_tangent(grid, params, rng):
    L0 = random_rotation(rng)
    f1 = vmf_density(params, L0, grid) * rng.standard_normal(grid.size)
    first, _ = attitude_derivatives(grid, 1.0, L0, f1, compute_c1(params))
    X = L0.T @ first
    np.testing.assert_allclose(X, -X.T, atol=1e-14)
