import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from attitude_hydro.errors import CflViolation
from attitude_hydro.field import integrate
from attitude_hydro.sohb import SpatialGrid
from attitude_hydro.so3 import exp_so3, random_rotation
from attitude_hydro.sokb import (
    CollisionInfo,
    KineticState,
    SokbConfig,
    _anderson,
    collision_step,
    dissipation_functional,
    local_equilibrium_distance,
    moments,
    node_velocities,
    run_sokb,
    transport_step,
)
from attitude_hydro.vmf import VmfParams, vmf_density


def _state(so3, n=16, f=None, eps=1.0, rng=None):
    """Perturbed local equilibria with random attitudes."""
    space = SpatialGrid(1, n)
    if f is None:
        rng = rng or np.random.default_rng(0)
        M = vmf_density(VmfParams(1.0, 1.0), random_rotation(rng, n), so3)
        f = M * (1.0 + 0.5 * rng.random((n, so3.size)))
    return KineticState(space, so3, f, eps)


def test_node_velocities_are_unit_vectors(small_grid):
    space = SpatialGrid(3, 16)
    v = node_velocities(small_grid, space)
    np.testing.assert_allclose(np.sum(v**2, axis=0), 1.0, atol=1e-14)


@pytest.mark.parametrize("scheme", ["spectral", "upwind"])
def test_transport_conserves_mass(small_grid, scheme):
    s = _state(small_grid)
    out = transport_step(s, 0.5 * s.space.dx, scheme)
    assert out.total_mass() == pytest.approx(s.total_mass(), rel=1e-14)
    assert out.t == pytest.approx(0.5 * s.space.dx)


def test_spectral_transport_shift_is_exact(small_grid):
    s = _state(small_grid, n=32)
    x = s.space.centers
    s.f = np.tile((1.0 + 0.3 * np.sin(2 * np.pi * x))[:, None], (1, small_grid.size))
    dt = 0.137
    v = node_velocities(small_grid, s.space)[0]
    out = transport_step(s, dt, "spectral")
    exact = 1.0 + 0.3 * np.sin(2 * np.pi * (x[:, None] - v[None, :] * dt))
    np.testing.assert_allclose(out.f, exact, atol=1e-13)


def test_upwind_cfl(small_grid):
    s = _state(small_grid)
    with pytest.raises(CflViolation):
        transport_step(s, 1.5 * s.space.dx, "upwind")


def test_collision_conserves_cell_mass(small_grid, small_ops, params):
    s = _state(small_grid, rng=np.random.default_rng(3))
    out = collision_step(s, params, 0.5, small_ops)
    np.testing.assert_allclose(integrate(small_grid, out.f), integrate(small_grid, s.f), rtol=1e-10)


def test_equilibrium_is_fixed(grid, ops, params, rng):
    Lam = random_rotation(rng, 16)
    rho = 1.0 + 0.5 * rng.random(16)
    f = rho[:, None] * vmf_density(params, Lam, grid)
    s = _state(grid, f=f)
    out = collision_step(s, params, 1.0, ops)
    np.testing.assert_allclose(out.f, f, rtol=1e-9)
    H = dissipation_functional(grid, f, Lam, params, ops)
    assert np.max(np.abs(H)) < 1e-12


def test_relaxation_decreases_distance(small_grid, small_ops, params):
    s = _state(small_grid, rng=np.random.default_rng(7))
    d = [local_equilibrium_distance(s, params)]
    info = CollisionInfo()
    for _ in range(4):
        s = collision_step(s, params, 0.5, small_ops, info=info, max_picard=4)
        d.append(local_equilibrium_distance(s, params))
    assert all(b < a for a, b in zip(d, d[1:]))
    assert info.pcg_iterations > 0 and info.skipped == []


def test_dissipation_nonpositive(small_grid, small_ops, params, rng):
    s = _state(small_grid, rng=rng)
    mom = moments(s)
    H = dissipation_functional(small_grid, s.f, mom.Lam, params, small_ops)
    assert np.all(H <= 0)


def test_empty_cells_are_skipped(small_grid, small_ops, params):
    f = _state(small_grid).f
    f[3] = 0.0
    info = CollisionInfo()
    out = collision_step(_state(small_grid, f=f), params, 0.5, small_ops, info=info)
    assert info.skipped == [3]
    assert np.all(out.f[3] == 0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_anderson_solves_linear_maps(seed):
    """With enough history Anderson mixing hits the fixed point of an affine contraction."""
    rng = np.random.default_rng(seed)
    n = 3
    A = 0.5 * rng.standard_normal((2, n, n)) / n
    b = rng.standard_normal((2, n))
    g = lambda x: np.einsum("cij,cj->ci", A, x) + b
    xs, gs = [np.zeros((2, n))], []
    gs.append(g(xs[0]))
    for _ in range(n + 1):
        xs.append(_anderson(xs, gs))
        gs.append(g(xs[-1]))
    exact = np.linalg.solve(np.eye(n) - A, b[..., None])[..., 0]
    np.testing.assert_allclose(xs[-1], exact, atol=1e-8)


def test_run_sokb_diagnostics(small_grid, small_ops, params):
    space = SpatialGrid(1, 16)
    x = space.centers
    Lam = exp_so3(0.5 * np.sin(2 * np.pi * x)[:, None] * np.array([0.0, 0.0, 1.0]))
    f = vmf_density(params, Lam, small_grid) * (1.0 + 0.2 * np.cos(2 * np.pi * x))[:, None]
    s = KineticState(space, small_grid, f, 1.0)
    cfg = SokbConfig(eps=0.5, T=0.25, dt=s.space.dx, output_every=2)
    traj = run_sokb(cfg, s, params, small_ops)
    assert traj.times[0] == 0.0 and traj.times[-1] == pytest.approx(0.25)
    m = [r["mass"] for r in traj.diagnostics]
    assert max(abs(x - m[0]) for x in m) < 1e-12 * m[0]
    assert all(r["H"] <= 0 for r in traj.diagnostics)
    with pytest.raises(ValueError):
        run_sokb(SokbConfig(eps=0.5, T=0.1, dt=0.03), s, params, small_ops)
