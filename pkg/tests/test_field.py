import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from attitude_hydro.errors import GridTooCoarse, SizeMismatch
from attitude_hydro.field import (
    build_grid,
    export_matrix,
    implicit_relaxation,
    integrate,
    load_matrix,
    poincare_constant,
)
from attitude_hydro.so3 import cross_matrix, dot_half, random_rotation, tangent_projection
from attitude_hydro.vmf import VmfParams, vmf_density


def test_weights_are_a_probability(grid):
    assert grid.size == 25 * 12 * 25
    assert np.all(grid.weights > 0)
    assert grid.weights.sum() == pytest.approx(1.0, abs=1e-14)


def test_haar_moments(grid):
    A = grid.rotations
    np.testing.assert_allclose(integrate(grid, A.reshape(-1, 9).T), 0.0, atol=1e-14)
    second = np.einsum("q,qij,qkl->ijkl", grid.weights, A, A)
    expect = np.einsum("ik,jl->ijkl", np.eye(3), np.eye(3)) / 3.0
    np.testing.assert_allclose(second, expect, atol=1e-14)


@pytest.mark.parametrize("shape", [(8, 6, 9), (9, 6, 10), (7, 6, 9), (9, 3, 9)])
def test_coarse_or_even_grids_rejected(shape):
    with pytest.raises(GridTooCoarse):
        build_grid(*shape)


def test_size_mismatch(grid):
    with pytest.raises(SizeMismatch):
        integrate(grid, np.ones(grid.size - 1))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gradient_of_linear_field_is_tangent_projection(grid, ops, seed):
    M = np.random.default_rng(seed).standard_normal((3, 3))
    A = grid.rotations
    w = ops.grad(dot_half(A, M))
    np.testing.assert_allclose(A @ cross_matrix(w), tangent_projection(A, M), atol=1e-9)


def test_gradient_of_constant_vanishes(ops, grid):
    np.testing.assert_allclose(ops.grad(np.full(grid.size, 3.0)), 0.0, atol=1e-12)


def test_divergence_is_weighted_adjoint(ops, grid, rng):
    g = dot_half(grid.rotations, rng.standard_normal((3, 3))) ** 2
    V = ops.grad(dot_half(grid.rotations, rng.standard_normal((3, 3))))
    lhs = integrate(grid, ops.div(V) * g)
    rhs = -integrate(grid, np.sum(V * ops.grad(g), axis=-1))
    assert lhs == pytest.approx(rhs, rel=1e-11, abs=1e-13)


def test_stiffness_form_symmetric_semidefinite(small_grid, small_ops, params, rng):
    M = vmf_density(params, random_rotation(rng), small_grid)
    K = small_ops.weighted_laplacian_form(np.eye(small_grid.size), M)
    np.testing.assert_allclose(K, K.T, atol=1e-11 * np.abs(K).max())
    ev = np.linalg.eigvalsh(0.5 * (K + K.T))
    assert ev[0] > -1e-10 * ev[-1]
    assert ev[1] > 1e-6  # constants are the only null vector


def test_fokker_planck_kills_equilibrium_and_conserves_mass(grid, ops, params, rng):
    M = vmf_density(params, random_rotation(rng), grid)
    np.testing.assert_allclose(ops.fokker_planck(2.5 * M, M, params.d), 0.0, atol=1e-11)
    f = M * (1.0 + 0.3 * dot_half(grid.rotations, rng.standard_normal((3, 3))))
    assert abs(integrate(grid, ops.fokker_planck(f, M, params.d))) < 1e-13


def test_constant_coefficient_solver_matches_dense(small_grid, small_ops, rng):
    n = small_grid.size
    W = np.diag(small_grid.weights)
    L0 = small_ops.weighted_laplacian_form(np.eye(n), np.ones(n))
    r = rng.standard_normal(n)
    u = small_ops.solve_constant_coefficient(r, 0.7, 1.3)
    np.testing.assert_allclose((0.7 * W + 1.3 * L0) @ u, r, atol=1e-11 * np.abs(r).max())


def test_implicit_step_against_matrix_exponential(small_grid, small_ops, params, rng):
    """Backward Euler has local error O(tau^2): halving tau quarters it."""
    M = vmf_density(params, random_rotation(rng), small_grid)
    f0 = M * (1.0 + 0.4 * dot_half(small_grid.rotations, rng.standard_normal((3, 3))))
    Lmat = small_ops.fokker_planck_matrix(M, 1.0)
    errs = []
    for tau in (0.02, 0.01, 0.005):
        f, _, _ = implicit_relaxation(small_ops, M, f0, tau, tol=1e-13)
        errs.append(np.max(np.abs(f - expm(tau * Lmat) @ f0)))
        assert integrate(small_grid, f) == pytest.approx(integrate(small_grid, f0), abs=1e-14)
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8)


def test_poincare_constant_small_kappa(small_grid):
    lam = poincare_constant(small_grid, np.eye(3), VmfParams(1e-9, 1.0))
    assert lam == pytest.approx(2.0, abs=1e-6)


def test_poincare_constant_kappa_one(grid):
    lam = poincare_constant(grid, np.eye(3), VmfParams(1.0, 1.0))
    assert lam == pytest.approx(1.6869079, abs=1e-6)


def test_matrix_export_roundtrip(tmp_path, small_ops, small_grid, params):
    M = vmf_density(params, np.eye(3), small_grid)
    L = small_ops.fokker_planck_matrix(M, 1.0)
    p = tmp_path / "op.bin"
    export_matrix(p, L)
    raw = p.read_bytes()
    assert raw[:8] == b"SO3OPMAT" and len(raw) == 16 + 8 * L.size
    np.testing.assert_array_equal(load_matrix(p), L)
    with pytest.raises(ValueError):
        export_matrix(tmp_path / "bad.bin", np.ones((2, 3)))
