import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from attitude_hydro.errors import CflViolation, SolverAbort
from attitude_hydro.sohb import (
    FrameState,
    SohbConfig,
    SpatialGrid,
    assemble_matrices,
    cfl_speed,
    choose_chart_rotation,
    constraint_drift,
    frame_to_stereo_state,
    initial_frame_state,
    partial,
    quasilinear_matrices,
    run_sohb,
    sample_spectral,
    step_frame,
    step_stereo,
    stereo_to_frame_state,
)
from attitude_hydro.so3 import is_rotation

states = arrays(np.float64, 7, elements=st.floats(-20, 20)).map(
    lambda u: np.concatenate([[0.05 + abs(u[0])], u[1:]]))


def test_grid_validation():
    with pytest.raises(ValueError):
        SpatialGrid(1, 8)
    with pytest.raises(ValueError):
        SpatialGrid(2, 32)
    with pytest.raises(ValueError):
        SpatialGrid(1, 32, direction=(1.0, 1.0, 0.0))


def test_partial_derivatives():
    g = SpatialGrid(1, 64, 2.0)
    x = g.centers
    F = np.sin(2 * np.pi * x / g.L)
    exact = 2 * np.pi / g.L * np.cos(2 * np.pi * x / g.L)
    np.testing.assert_allclose(partial(g, F, 0, "spectral"), exact, atol=1e-12)
    e64 = np.max(np.abs(partial(g, F, 0) - exact))
    g2 = SpatialGrid(1, 128, 2.0)
    e128 = np.max(np.abs(partial(g2, np.sin(2 * np.pi * g2.centers / 2.0), 0)
                        - np.pi * np.cos(np.pi * g2.centers)))
    assert np.log2(e64 / e128) == pytest.approx(2.0, abs=0.05)


def test_sample_spectral_exact_for_band_limited():
    fine = SpatialGrid(1, 128)
    coarse = SpatialGrid(1, 32)
    f = lambda x: 1.0 + np.cos(2 * np.pi * x) + 0.3 * np.sin(6 * np.pi * x)
    np.testing.assert_allclose(sample_spectral(f(fine.centers), 32), f(coarse.centers), atol=1e-12)
    two = np.stack([f(fine.centers), 2 * f(fine.centers)], axis=-1)
    np.testing.assert_allclose(sample_spectral(two, 32)[:, 1], 2 * f(coarse.centers), atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(states)
def test_symmetrized_matrices(coeffs, U):
    A0, As = assemble_matrices(U, coeffs)
    assert np.all(np.linalg.eigvalsh(A0) > 0)
    for A in As:
        np.testing.assert_allclose(A, A.T, atol=1e-14 * max(1.0, np.abs(A).max()))


@settings(max_examples=50, deadline=None)
@given(states)
def test_symmetrizer_relation(coeffs, U):
    """The symmetrized matrices are the quasilinear ones left-multiplied by a positive diagonal."""
    A0q, Asq = quasilinear_matrices(U, coeffs)
    A0, As = assemble_matrices(U, coeffs)
    rho = U[0]
    W1 = 1 + U[1] ** 2 + U[2] ** 2
    K = np.diag([1.0, coeffs.c1 * rho / (coeffs.c3 * W1**2), coeffs.c1 * rho / (coeffs.c3 * W1**2), 1, 1, 1, 1])
    np.testing.assert_allclose(K @ A0q, A0, rtol=1e-12)
    for Aq, A in zip(Asq, As):
        np.testing.assert_allclose(K @ Aq, A, rtol=1e-12, atol=1e-14 * np.abs(A).max())


def test_chart_rotation_avoids_pole():
    g = SpatialGrid(1, 16)
    Lam = np.broadcast_to(np.eye(3), (16, 3, 3)).copy()  # third column at the pole
    R = choose_chart_rotation(Lam)
    assert is_rotation(R)
    fs = FrameState(g, np.ones(16), Lam)
    ss = frame_to_stereo_state(fs)
    back = stereo_to_frame_state(ss)
    np.testing.assert_allclose(back.Lam, Lam, atol=1e-12)
    np.testing.assert_allclose(back.grid.direction, g.direction, atol=1e-15)


@pytest.mark.parametrize("form", ["stereo", "frame"])
def test_constant_state_stationary(coeffs, form):
    g = SpatialGrid(1, 32)
    fs = initial_frame_state(g, "constant")
    traj = run_sohb(SohbConfig(grid=g, T=0.1, form=form), fs, coeffs)
    np.testing.assert_allclose(traj.rho[-1], fs.rho, atol=1e-14)
    np.testing.assert_allclose(traj.Lam[-1], fs.Lam, atol=1e-13)


@pytest.mark.parametrize("form", ["stereo", "frame"])
def test_mass_conserved(coeffs, form):
    g = SpatialGrid(1, 64)
    fs = initial_frame_state(g, "gaussian-bump-rho", rho_amp=0.5)
    traj = run_sohb(SohbConfig(grid=g, T=0.2, form=form, output_every=5), fs, coeffs)
    m = [r["mass"] for r in traj.diagnostics]
    assert max(abs(x - m[0]) for x in m) < 1e-13
    assert all(r["min_rho"] > 0 for r in traj.diagnostics)


def test_frame_constraint_drift_converges(coeffs):
    drift = []
    for n in (32, 64, 128):
        g = SpatialGrid(1, n)
        traj = run_sohb(SohbConfig(grid=g, T=0.25, form="frame", output_every=10**6),
                        initial_frame_state(g, "twist-lambda"), coeffs)
        drift.append(constraint_drift(traj.Lam[-1]))
    rates = np.log2(np.array(drift[:-1]) / np.array(drift[1:]))
    assert np.all(rates > 1.5)


def test_spectral_rk4_frame_is_accurate(coeffs):
    g = SpatialGrid(1, 64)
    fs = initial_frame_state(g, "twist-lambda")
    s = fs
    for _ in range(40):
        s = step_frame(s, coeffs, 0.0025, cfl=0.4, scheme="spectral", integrator="rk4", dissipation=False)
    assert constraint_drift(s.Lam) < 1e-8


def test_cfl_violation(coeffs):
    g = SpatialGrid(1, 32)
    ss = frame_to_stereo_state(initial_frame_state(g, "twist-lambda"))
    dt = 2.0 * g.dx / cfl_speed(ss, coeffs)
    with pytest.raises(CflViolation):
        step_stereo(ss, coeffs, dt)


def test_abort_carries_partial_trajectory(coeffs):
    g = SpatialGrid(1, 32)
    cfg = SohbConfig(grid=g, T=0.5, form="stereo", cfl=5.0, output_every=1)
    with pytest.raises(SolverAbort) as info:
        run_sohb(cfg, initial_frame_state(g, "twist-lambda", amplitude=1.5, rho_amp=0.9), coeffs)
    assert info.value.trajectory.times[0] == 0.0
    assert info.value.time is not None
