"""Solvers for the macroscopic density/attitude system on a periodic box.

Two formulations share the spatial machinery:

* stereographic: unknowns ``U = (rho, phi1, theta1, phi2, theta2, phi3,
  theta3)`` per cell, advanced as the quasilinear system
  ``A0 dU/dt + sum_i A^i d_i U = 0``;
* frame: unknowns ``rho`` and the frame ``Lam = [Omega | u | v]``, advanced
  with the ``delta``/``r`` operators and no re-orthonormalization, so the
  drift of ``Lam^T Lam - I`` is a measured quantity.

Fields carry the spatial axes first.  In 1D mode every field varies along a
single unit ``direction`` in R^3 (default ``e1``) while all three vector
components are retained.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CflViolation, NonPositiveDensity, PoleSingularity, SolverAbort
from .so3 import (
    exp_so3,
    stereo_jacobian,
    stereo_to_vector,
    vector_to_stereo,
)

DEFAULT_CFL = 0.4
POLE_MARGIN = 0.1


# ----------------------------------------------------------------------------
# spatial grid and derivatives


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform periodic cells on ``[0, L)^dim``."""

    dim: int = 1
    n: int = 64
    L: float = 1.0
    direction: tuple = (1.0, 0.0, 0.0)

    def __post_init__(self):
        if self.dim not in (1, 3):
            raise ValueError("dim must be 1 or 3")
        if self.n < 16:
            raise ValueError(f"need at least 16 cells per axis, got {self.n}")
        if not self.L > 0:
            raise ValueError("L must be positive")
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ValueError("direction must be a unit vector")

    @property
    def shape(self):
        return (self.n,) * self.dim

    @property
    def dx(self):
        return self.L / self.n

    @property
    def cell_volume(self):
        return self.dx**self.dim

    @property
    def centers(self):
        return (np.arange(self.n) + 0.5) * self.dx

    def axis_directions(self):
        """Unit vector in R^3 along which each array axis varies."""
        if self.dim == 1:
            return [np.asarray(self.direction, dtype=float)]
        return list(np.eye(3))

    def coordinate(self, axis=0):
        """Coordinate along array axis ``axis`` broadcast to ``shape``."""
        x = self.centers
        shp = [1] * self.dim
        shp[axis] = self.n
        return np.broadcast_to(x.reshape(shp), self.shape)

    def total(self, field_values):
        """Sum over cells times cell volume (fixed order)."""
        return float(np.sum(field_values) * self.cell_volume)


def partial(grid: SpatialGrid, F, axis, scheme="central"):
    """Derivative along array ``axis`` of a field with spatial axes first."""
    F = np.asarray(F, dtype=float)
    if scheme == "central":
        return (np.roll(F, -1, axis=axis) - np.roll(F, 1, axis=axis)) / (2.0 * grid.dx)
    if scheme == "spectral":
        k = 2j * np.pi * np.fft.fftfreq(grid.n, d=grid.dx)
        if grid.n % 2 == 0:
            k[grid.n // 2] = 0.0
        shp = [1] * F.ndim
        shp[axis] = grid.n
        return np.real(np.fft.ifft(k.reshape(shp) * np.fft.fft(F, axis=axis), axis=axis))
    raise ValueError(f"unknown derivative scheme {scheme!r}")


def spatial_gradient(grid: SpatialGrid, F, scheme="central"):
    """``d_i F`` for i = 1..3 stacked after the spatial axes: ``S + (3,) + C``."""
    F = np.asarray(F, dtype=float)
    out = np.zeros(F.shape[: grid.dim] + (3,) + F.shape[grid.dim :])
    for ax, n in enumerate(grid.axis_directions()):
        dF = partial(grid, F, ax, scheme)
        for i in range(3):
            if n[i] != 0.0:
                out[(slice(None),) * grid.dim + (i,)] += n[i] * dF
    return out


def _mc_slope(F, axis):
    """Monotonized-central limited slope along ``axis``."""
    fwd = np.roll(F, -1, axis=axis) - F
    bwd = F - np.roll(F, 1, axis=axis)
    cen = 0.5 * (fwd + bwd)
    lim = np.minimum(np.minimum(2 * np.abs(fwd), 2 * np.abs(bwd)), np.abs(cen))
    return np.where(fwd * bwd > 0, np.sign(cen) * lim, 0.0)


def _face_states(F, axis):
    """Left/right reconstructed states at the face ``i + 1/2`` along ``axis``."""
    s = _mc_slope(F, axis)
    left = F + 0.5 * s
    right = np.roll(F - 0.5 * s, -1, axis=axis)
    return left, right


def _face_max(a, axis):
    return np.maximum(a, np.roll(a, -1, axis=axis))


def _divergence_faces(G, axis, dx):
    """``(G_{i+1/2} - G_{i-1/2}) / dx`` for face values ``G``."""
    return (G - np.roll(G, 1, axis=axis)) / dx


# ----------------------------------------------------------------------------
# states


@dataclass
class FrameState:
    grid: SpatialGrid
    rho: np.ndarray  # S
    Lam: np.ndarray  # S + (3, 3), columns Omega, u, v
    t: float = 0.0

    def copy(self, **kw):
        base = dict(rho=self.rho.copy(), Lam=self.Lam.copy())
        base.update(kw)
        return replace(self, **base)


@dataclass
class StereoState:
    """Stereographic unknowns ``U`` (``S + (7,)``) and the chart rotation.

    The physical frame is ``R^T Lam_chart`` where ``R`` is ``chart_rotation``;
    it is the identity unless the initial frame came too close to the pole.
    """

    grid: SpatialGrid
    U: np.ndarray
    t: float = 0.0
    chart_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    @property
    def rho(self):
        return self.U[..., 0]

    @property
    def phi(self):
        return self.U[..., 1::2]

    @property
    def theta(self):
        return self.U[..., 2::2]

    def chart_frame(self):
        cols = stereo_to_vector(self.phi, self.theta)  # S + (3 cols, 3 comps)
        return np.swapaxes(cols, -1, -2)

    def frame(self):
        """Physical frame (chart rotation undone)."""
        return self.chart_rotation.T @ self.chart_frame()

    def copy(self, **kw):
        base = dict(U=self.U.copy())
        base.update(kw)
        return replace(self, **base)


def _octahedral_rotations():
    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            R = np.zeros((3, 3))
            for i, j in enumerate(perm):
                R[i, j] = signs[i]
            if np.linalg.det(R) > 0:
                mats.append(R)
    return mats


def choose_chart_rotation(Lam, margin=POLE_MARGIN):
    """Identity if every column keeps distance ``margin`` from the north pole,
    otherwise the axis-permuting rotation with the largest clearance."""
    Lam = np.asarray(Lam, dtype=float)
    pole = np.array([0.0, 0.0, 1.0])

    def clearance(R):
        cols = np.swapaxes(R @ Lam, -1, -2).reshape(-1, 3)
        return np.min(np.linalg.norm(cols - pole, axis=-1))

    if clearance(np.eye(3)) >= margin:
        return np.eye(3)
    best = max(_octahedral_rotations(), key=clearance)
    if clearance(best) < margin:
        raise PoleSingularity("no axis-permuting rotation keeps every frame column away from the pole")
    return best


def frame_to_stereo_state(fs: FrameState, margin=POLE_MARGIN) -> StereoState:
    """Chart the frame state; rotates space and frame together when needed."""
    R = choose_chart_rotation(fs.Lam, margin)
    grid = fs.grid
    if not np.allclose(R, np.eye(3)):
        if grid.dim == 1:
            grid = replace(grid, direction=tuple(R @ np.asarray(grid.direction)))
        else:
            # an axis permutation of a cubic periodic grid: relabel array axes
            raise PoleSingularity("3D grids must start pole-free; rotate the initial data instead")
    cols = np.swapaxes(R @ fs.Lam, -1, -2)
    phi, theta = vector_to_stereo(cols)
    U = np.empty(fs.rho.shape + (7,))
    U[..., 0] = fs.rho
    U[..., 1::2] = phi
    U[..., 2::2] = theta
    return StereoState(grid=grid, U=U, t=fs.t, chart_rotation=R)


def stereo_to_frame_state(ss: StereoState) -> FrameState:
    grid = ss.grid
    R = ss.chart_rotation
    if grid.dim == 1:
        grid = replace(grid, direction=tuple(R.T @ np.asarray(grid.direction)))
    return FrameState(grid=grid, rho=ss.rho.copy(), Lam=ss.frame(), t=ss.t)


# ----------------------------------------------------------------------------
# symmetric hyperbolic structure


def _unpack_cell(U):
    U = np.asarray(U, dtype=float)
    rho = U[..., 0]
    phi1, th1 = U[..., 1], U[..., 2]
    W1 = 1.0 + phi1**2 + th1**2
    Omega = stereo_to_vector(phi1, th1)
    O_phi, O_th = stereo_jacobian(phi1, th1)
    return rho, W1, Omega, O_phi, O_th


def assemble_matrices(U, coeffs):
    """Symmetrized matrices ``(A0t, [A1t, A2t, A3t])`` for states ``U``.

    ``U`` has shape ``(..., 7)``.  ``A0t`` is diagonal and the ``Ait`` are
    symmetric; both follow from left-multiplying the quasilinear form by
    ``diag(K3, I4)`` with ``K3 = diag(1, c1 rho / (c3 W1^2), same)``.
    """
    rho, W1, Omega, O_phi, O_th = _unpack_cell(U)
    if np.any(rho <= 0):
        raise NonPositiveDensity("assemble_matrices requires rho > 0")
    c1, c2, c3 = coeffs.c1, coeffs.c2, coeffs.c3
    batch = rho.shape
    A0 = np.zeros(batch + (7, 7))
    A0[..., 0, 0] = 1.0
    A0[..., 1, 1] = A0[..., 2, 2] = 4 * c1 * rho**2 / (c3 * W1**2)
    for k in range(3, 7):
        A0[..., k, k] = 4 * rho
    As = []
    for i in range(3):
        A = np.zeros(batch + (7, 7))
        A[..., 0, 0] = c1 * Omega[..., i]
        A[..., 0, 1] = A[..., 1, 0] = c1 * rho * O_phi[..., i]
        A[..., 0, 2] = A[..., 2, 0] = c1 * rho * O_th[..., i]
        A[..., 1, 1] = A[..., 2, 2] = 4 * c1 * c2 * rho**2 / (c3 * W1**2) * Omega[..., i]
        for k in range(3, 7):
            A[..., k, k] = 4 * c2 * rho * Omega[..., i]
        As.append(A)
    return A0, As


def quasilinear_matrices(U, coeffs):
    """Unsymmetrized ``(A0, [A1, A2, A3])`` of the stereographic system."""
    rho, W1, Omega, O_phi, O_th = _unpack_cell(U)
    c1, c2, c3 = coeffs.c1, coeffs.c2, coeffs.c3
    batch = rho.shape
    A0 = np.zeros(batch + (7, 7))
    A0[..., 0, 0] = 1.0
    for k in range(1, 7):
        A0[..., k, k] = 4 * rho
    As = []
    for i in range(3):
        A = np.zeros(batch + (7, 7))
        A[..., 0, 0] = c1 * Omega[..., i]
        A[..., 0, 1] = c1 * rho * O_phi[..., i]
        A[..., 0, 2] = c1 * rho * O_th[..., i]
        A[..., 1, 0] = c3 * W1**2 * O_phi[..., i]
        A[..., 2, 0] = c3 * W1**2 * O_th[..., i]
        for k in range(1, 7):
            A[..., k, k] = 4 * c2 * rho * Omega[..., i]
        As.append(A)
    return A0, As


def _gershgorin_speed(U, coeffs, n):
    """Gershgorin bound on the spectral radius of ``A0t^{-1} sum_i n_i Ait``.

    Evaluated on the similar symmetric matrix ``A0t^{-1/2} Ant A0t^{-1/2}``
    (``A0t`` is diagonal), so every disc radius is a row sum of absolute
    values.  Returns one bound per cell.
    """
    rho, W1, Omega, O_phi, O_th = _unpack_cell(U)
    if np.any(rho <= 0):
        raise NonPositiveDensity("rho must be positive")
    c1, c2, c3 = coeffs.c1, coeffs.c2, coeffs.c3
    on = Omega @ n
    pn = O_phi @ n
    tn = O_th @ n
    # scaled off-diagonal: c1 rho O / sqrt(4 c1 rho^2 / (c3 W1^2)) = sqrt(c1 c3) W1 O / 2
    s = 0.5 * np.sqrt(c1 * c3) * W1
    r0 = np.abs(c1 * on) + s * (np.abs(pn) + np.abs(tn))
    r1 = np.abs(c2 * on) + s * np.abs(pn)
    r2 = np.abs(c2 * on) + s * np.abs(tn)
    return np.maximum(np.maximum(r0, r1), r2)


def cfl_speed(state: StereoState, coeffs):
    """Upper bound on characteristic speeds over cells and active axes."""
    return max(float(np.max(_gershgorin_speed(state.U, coeffs, n))) for n in state.grid.axis_directions())


def frame_speed_bound(coeffs):
    """Crude state-independent speed bound used for the frame form."""
    return abs(coeffs.c1) + abs(coeffs.c2) + np.sqrt(2 * abs(coeffs.c1 * coeffs.c3)) + 3 * abs(coeffs.c4)


# ----------------------------------------------------------------------------
# stereographic right-hand side


def stereo_rhs(state: StereoState, coeffs):
    grid = state.grid
    U = state.U
    c1, c2, c3 = coeffs.c1, coeffs.c2, coeffs.c3
    out = np.zeros_like(U)
    rho = U[..., 0]
    for ax, n in enumerate(grid.axis_directions()):
        a_cell = _gershgorin_speed(U, coeffs, n)
        a_face = _face_max(a_cell, ax)
        UL, UR = _face_states(U, ax)
        # conservative density flux c1 rho (Omega . n)
        FL = c1 * UL[..., 0] * (stereo_to_vector(UL[..., 1], UL[..., 2]) @ n)
        FR = c1 * UR[..., 0] * (stereo_to_vector(UR[..., 1], UR[..., 2]) @ n)
        flux = 0.5 * (FL + FR) - 0.5 * a_face * (UR[..., 0] - UL[..., 0])
        out[..., 0] -= _divergence_faces(flux, ax, grid.dx)
        # non-conservative part for the angle variables
        G = partial(grid, U, ax)
        _, W1, Omega, O_phi, O_th = _unpack_cell(U)
        on = Omega @ n
        out[..., 1] -= c3 * W1**2 * (O_phi @ n) * G[..., 0] / (4 * rho) + c2 * on * G[..., 1]
        out[..., 2] -= c3 * W1**2 * (O_th @ n) * G[..., 0] / (4 * rho) + c2 * on * G[..., 2]
        out[..., 3:] -= c2 * on[..., None] * G[..., 3:]
        D = 0.5 * a_face[..., None] * (UR[..., 1:] - UL[..., 1:])
        out[..., 1:] += _divergence_faces(D, ax, grid.dx)
    return out


def _check_dt(dt, v_max, dx, cfl):
    if dt * v_max > cfl * dx * (1 + 1e-12):
        raise CflViolation(f"dt={dt:.3e} exceeds CFL limit {cfl * dx / v_max:.3e}")


def step_stereo(state: StereoState, coeffs, dt, cfl=DEFAULT_CFL) -> StereoState:
    """One two-stage SSP Runge-Kutta step of the stereographic system."""
    _check_dt(dt, cfl_speed(state, coeffs), state.grid.dx, cfl)
    k1 = stereo_rhs(state, coeffs)
    s1 = state.copy(U=state.U + dt * k1)
    if np.any(s1.rho <= 0):
        raise NonPositiveDensity(f"rho <= 0 at t={state.t + dt:.6g}")
    k2 = stereo_rhs(s1, coeffs)
    new = state.copy(U=state.U + 0.5 * dt * (k1 + k2), t=state.t + dt)
    if np.any(new.rho <= 0):
        raise NonPositiveDensity(f"rho <= 0 at t={new.t:.6g}")
    return new


# ----------------------------------------------------------------------------
# frame form


def delta_r(Lam, dLam):
    """``delta`` and ``r`` from a frame and its gradient ``dLam[..., i, :, :]``."""
    Om, u, v = Lam[..., :, 0], Lam[..., :, 1], Lam[..., :, 2]
    # directional derivative (a . grad) X = sum_i a_i d_i X
    def dirder(a, col):
        return np.einsum("...i,...ik->...k", a, dLam[..., :, :, col])

    delta = (
        np.sum(dirder(Om, 1) * v, axis=-1)
        + np.sum(dirder(u, 2) * Om, axis=-1)
        + np.sum(dirder(v, 0) * u, axis=-1)
    )
    div = lambda col: np.einsum("...ii->...", dLam[..., :, :, col])
    r = div(0)[..., None] * Om + div(1)[..., None] * u + div(2)[..., None] * v
    return delta, r


def frame_time_derivative(rho, Lam, grad_rho, dLam, coeffs):
    """Pointwise ``(d rho/dt, d Lam/dt)`` of the frame form given spatial derivatives.

    ``grad_rho``: ``S + (3,)``; ``dLam``: ``S + (3, 3, 3)`` with the spatial
    index first.  The density equation is used in the expanded form
    ``c1 (Omega . grad rho + rho div Omega)``.
    """
    c1, c2, c3, c4 = coeffs.c1, coeffs.c2, coeffs.c3, coeffs.c4
    Om, u, v = Lam[..., :, 0], Lam[..., :, 1], Lam[..., :, 2]
    delta, r = delta_r(Lam, dLam)
    div_om = np.einsum("...ii->...", dLam[..., :, :, 0])
    drho = -c1 * (np.sum(Om * grad_rho, axis=-1) + rho * div_om)
    q = c3 * grad_rho + c4 * rho[..., None] * r
    adv = np.einsum("...i,...ijk->...jk", Om, dLam)  # (Omega . grad) Lam
    dOm = -c2 * adv[..., :, 0] - (q - np.sum(Om * q, axis=-1)[..., None] * Om) / rho[..., None]
    du = -c2 * adv[..., :, 1] + (np.sum(u * q, axis=-1) / rho)[..., None] * Om - c4 * delta[..., None] * v
    dv = -c2 * adv[..., :, 2] + (np.sum(v * q, axis=-1) / rho)[..., None] * Om + c4 * delta[..., None] * u
    return drho, np.stack([dOm, du, dv], axis=-1)


def frame_rhs(state: FrameState, coeffs, scheme="central", dissipation=True):
    grid = state.grid
    rho, Lam = state.rho, state.Lam
    g_rho = spatial_gradient(grid, rho, scheme)
    dLam = spatial_gradient(grid, Lam, scheme)
    drho, dL = frame_time_derivative(rho, Lam, g_rho, dLam, coeffs)
    if scheme == "central":
        # conservative density update replaces the expanded form
        drho = np.zeros_like(rho)
        a = frame_speed_bound(coeffs) if dissipation else 0.0
        for ax, n in enumerate(grid.axis_directions()):
            rL, rR = _face_states(rho, ax)
            OL = _face_states(Lam[..., :, 0], ax)
            FL = coeffs.c1 * rL * (OL[0] @ n)
            FR = coeffs.c1 * rR * (OL[1] @ n)
            flux = 0.5 * (FL + FR) - 0.5 * a * (rR - rL)
            drho -= _divergence_faces(flux, ax, grid.dx)
            if dissipation:
                LL, LR = _face_states(Lam, ax)
                dL = dL + _divergence_faces(0.5 * a * (LR - LL), ax, grid.dx)
    return drho, dL


def step_frame(state: FrameState, coeffs, dt, cfl=DEFAULT_CFL, scheme="central",
               integrator="rk2", dissipation=True) -> FrameState:
    """One Runge-Kutta step of the frame form (no re-orthonormalization)."""
    _check_dt(dt, frame_speed_bound(coeffs), state.grid.dx, cfl)

    def rhs(s):
        return frame_rhs(s, coeffs, scheme, dissipation)

    def add(s, k, h):
        return s.copy(rho=s.rho + h * k[0], Lam=s.Lam + h * k[1])

    if integrator == "rk2":
        k1 = rhs(state)
        k2 = rhs(add(state, k1, dt))
        new = state.copy(rho=state.rho + 0.5 * dt * (k1[0] + k2[0]),
                         Lam=state.Lam + 0.5 * dt * (k1[1] + k2[1]), t=state.t + dt)
    elif integrator == "rk4":
        k1 = rhs(state)
        k2 = rhs(add(state, k1, dt / 2))
        k3 = rhs(add(state, k2, dt / 2))
        k4 = rhs(add(state, k3, dt))
        new = state.copy(
            rho=state.rho + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
            Lam=state.Lam + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
            t=state.t + dt,
        )
    else:
        raise ValueError(f"unknown integrator {integrator!r}")
    if np.any(new.rho <= 0):
        raise NonPositiveDensity(f"rho <= 0 at t={new.t:.6g}")
    return new


def constraint_drift(Lam):
    """``max_ij |Lam e_i . Lam e_j - delta_ij|`` over all cells."""
    Lam = np.asarray(Lam)
    return float(np.max(np.abs(np.swapaxes(Lam, -1, -2) @ Lam - np.eye(3))))


def frame_l2_difference(grid: SpatialGrid, a: FrameState, b: FrameState):
    d = (a.rho - b.rho) ** 2 + np.sum((a.Lam - b.Lam) ** 2, axis=(-2, -1))
    return float(np.sqrt(np.sum(d) * grid.cell_volume))


# ----------------------------------------------------------------------------
# initial data presets


DEFAULT_BASE_ROTATION = (0.3, -0.4, 0.5)


def initial_frame_state(grid: SpatialGrid, preset="twist-lambda", rho0=1.0, rho_amp=0.2,
                        amplitude=0.5, wavenumber=1, width=0.1, axis=(1.0, 0.0, 0.0),
                        base_rotation=DEFAULT_BASE_ROTATION) -> FrameState:
    """Smooth periodic initial data; every preset varies along array axis 0.

    ``constant``: ``rho0`` and the base rotation everywhere.
    ``gaussian-bump-rho``: a periodic bump ``rho0 + rho_amp exp((cos(2 pi (x - L/2)/L) - 1)/w^2)``
    with ``w = 2 pi width / L``, frame constant.
    ``twist-lambda``: ``Lam(x) = exp(amplitude sin(k x) [axis]x) Lam_base`` and
    ``rho = rho0 + rho_amp cos(k x)`` with ``k = 2 pi wavenumber / L``.
    """
    x = grid.coordinate(0)
    base = exp_so3(np.asarray(base_rotation, dtype=float))
    k = 2 * np.pi * wavenumber / grid.L
    if preset == "constant":
        rho = np.full(grid.shape, float(rho0))
        Lam = np.broadcast_to(base, grid.shape + (3, 3)).copy()
    elif preset == "gaussian-bump-rho":
        w = 2 * np.pi * width / grid.L
        rho = rho0 + rho_amp * np.exp((np.cos(2 * np.pi * (x - grid.L / 2) / grid.L) - 1) / w**2)
        Lam = np.broadcast_to(base, grid.shape + (3, 3)).copy()
    elif preset == "twist-lambda":
        ax = np.asarray(axis, dtype=float)
        ax = ax / np.linalg.norm(ax)
        rho = rho0 + rho_amp * np.cos(k * x)
        Lam = exp_so3((amplitude * np.sin(k * x))[..., None] * ax) @ base
    else:
        raise ValueError(f"unknown preset {preset!r}")
    if np.any(rho <= 0):
        raise NonPositiveDensity("initial density must be positive")
    return FrameState(grid=grid, rho=np.asarray(rho, dtype=float), Lam=Lam, t=0.0)


# ----------------------------------------------------------------------------
# driver


@dataclass
class SohbConfig:
    grid: SpatialGrid = field(default_factory=SpatialGrid)
    T: float = 0.5
    cfl: float = DEFAULT_CFL
    form: str = "stereo"  # stereo | frame
    scheme: str = "central"  # frame form only: central | spectral
    integrator: str = "rk2"  # frame form only: rk2 | rk4
    dissipation: bool = True
    output_every: int = 10
    max_steps: int = 10**7
    preset: str = "twist-lambda"
    preset_params: dict = field(default_factory=dict)


@dataclass
class SohbTrajectory:
    times: list
    rho: list
    Lam: list
    diagnostics: list
    chart_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    failure: str | None = None


def _diag_row(t, grid, rho, Lam, stereo_state=None):
    return {
        "t": float(t),
        "mass": grid.total(rho),
        "min_rho": float(np.min(rho)),
        "max_constraint_drift": constraint_drift(Lam),
    }


def run_sohb(config: SohbConfig, initial: FrameState | None = None, coeffs=None) -> SohbTrajectory:
    """Integrate to ``config.T`` recording every ``output_every`` steps and the final time.

    Any step error aborts with :class:`SolverAbort` carrying the failing time
    and the partial trajectory as ``abort.trajectory``.
    """
    if coeffs is None:
        raise ValueError("coefficients are required")
    fs = initial if initial is not None else initial_frame_state(config.grid, config.preset, **config.preset_params)
    grid = fs.grid
    traj = SohbTrajectory([], [], [], [])
    if config.form == "stereo":
        state = frame_to_stereo_state(fs)
        traj.chart_rotation = state.chart_rotation
        speed = lambda s: cfl_speed(s, coeffs)
        step = lambda s, dt: step_stereo(s, coeffs, dt, config.cfl)
        physical = lambda s: (s.rho.copy(), s.frame())
    elif config.form == "frame":
        state = fs
        fixed = frame_speed_bound(coeffs)
        speed = lambda s: fixed
        step = lambda s, dt: step_frame(s, coeffs, dt, config.cfl, config.scheme, config.integrator, config.dissipation)
        physical = lambda s: (s.rho.copy(), s.Lam.copy())
    else:
        raise ValueError(f"unknown form {config.form!r}")

    def record(s):
        rho, Lam = physical(s)
        traj.times.append(float(s.t))
        traj.rho.append(rho)
        traj.Lam.append(Lam)
        traj.diagnostics.append(_diag_row(s.t, grid, rho, Lam))

    record(state)
    nstep = 0
    while state.t < config.T * (1 - 1e-14) and nstep < config.max_steps:
        v = speed(state)
        dt = config.cfl * grid.dx / max(v, 1e-300)
        dt = min(dt, config.T - state.t)
        try:
            state = step(state, dt)
        except (NonPositiveDensity, CflViolation, PoleSingularity, FloatingPointError) as exc:
            traj.failure = f"{type(exc).__name__} at t={state.t:.6g}: {exc}"
            err = SolverAbort(traj.failure, time=state.t)
            err.trajectory = traj
            raise err from exc
        nstep += 1
        if nstep % config.output_every == 0 or state.t >= config.T * (1 - 1e-14):
            record(state)
    return traj


def sample_spectral(values, n_out, axis=0):
    """Resample a periodic field (uniform cells) onto ``n_out`` cells by Fourier interpolation.

    Cell centres of the coarse grid are a subset-shift of the fine ones, so
    the phase of each mode is adjusted for the half-cell offset.
    """
    values = np.asarray(values, dtype=float)
    n_in = values.shape[axis]
    Fh = np.fft.fft(values, axis=axis)
    k = np.fft.fftfreq(n_in, d=1.0 / n_in)
    # cell centres x = (j + 1/2) h: shift origin from x_in = h_in/2 to x_out = h_out/2
    shift = 0.5 / n_out - 0.5 / n_in  # in units of L
    phase = np.exp(2j * np.pi * k * shift)
    keep = np.abs(k) < n_out / 2
    shp = [1] * values.ndim
    shp[axis] = n_in
    Fh = Fh * (phase * keep).reshape(shp)
    x = (np.arange(n_out)) / n_out
    E = np.exp(2j * np.pi * np.outer(x, k))  # (n_out, n_in)
    out = np.tensordot(E, np.moveaxis(Fh, axis, 0), axes=([1], [0])) / n_in
    return np.moveaxis(np.real(out), 0, axis)
