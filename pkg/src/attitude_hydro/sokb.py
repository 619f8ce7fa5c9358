"""Discrete-velocity solver for the scaled kinetic equation

    d_t f + (A e1) . grad_x f = (1/eps) Q(f),   Q(f) = d div_A(M_{Lam[f]} grad_A(f / M_{Lam[f]})).

``f`` is stored as ``(cells..., nodes)``: spatial axes first, SO(3) node
last.  Each node ``A_q`` moves with the constant velocity ``A_q e1``, so
transport is an independent periodic shift per node.  Collisions are an
implicit Fokker-Planck relaxation per cell.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import CflViolation, SingularFlux, SolverAbort
from .field import EulerGrid, Operators, implicit_relaxation, integrate
from .sohb import SpatialGrid
from .so3 import polar_decompose
from .vmf import VmfParams, flux_lambda, vmf_density

log = logging.getLogger(__name__)

RHO_FLOOR_FACTOR = 1e-8
CLIP_ABORT_FRACTION = 1e-6


@dataclass
class KineticState:
    space: SpatialGrid
    so3: EulerGrid
    f: np.ndarray  # space.shape + (so3.size,)
    eps: float
    t: float = 0.0
    clipped_mass: float = 0.0
    skipped_cells: int = 0

    def copy(self, **kw):
        base = dict(space=self.space, so3=self.so3, f=self.f.copy(), eps=self.eps, t=self.t,
                    clipped_mass=self.clipped_mass, skipped_cells=self.skipped_cells)
        base.update(kw)
        return KineticState(**base)

    def total_mass(self):
        return float(np.sum(integrate(self.so3, self.f)) * self.space.cell_volume)


@dataclass
class MomentField:
    rho: np.ndarray
    lam: np.ndarray
    Lam: np.ndarray


def moments(state: KineticState, rho_floor=0.0) -> MomentField:
    rho = integrate(state.so3, state.f)
    lam = flux_lambda(state.so3, state.f)
    Lam = np.full(lam.shape, np.nan)
    ok = rho > rho_floor
    if np.any(ok):
        Lam[ok] = polar_decompose(lam[ok])
    return MomentField(rho=rho, lam=lam, Lam=Lam)


def node_velocities(so3: EulerGrid, space: SpatialGrid):
    """Velocity component of every node along each array axis: ``(n_axes, nodes)``."""
    e1 = so3.rotations[:, :, 0]  # A_q e1
    return np.stack([e1 @ n for n in space.axis_directions()])


# ----------------------------------------------------------------------------
# transport


def transport_step(state: KineticState, dt, scheme="spectral") -> KineticState:
    """Advance ``d_t f + (A e1) . grad_x f = 0`` by ``dt``.

    ``spectral``: exact periodic Fourier shift per node (any dt).
    ``upwind``: first-order upwind, requires ``dt <= dx`` (unit speeds).
    Both conserve total mass exactly up to rounding.
    """
    space = state.space
    vel = node_velocities(state.so3, space)
    f = state.f
    if scheme == "spectral":
        for ax in range(space.dim):
            k = np.fft.fftfreq(space.n, d=space.dx) * 2 * np.pi
            shp = [1] * (space.dim + 1)
            shp[ax] = space.n
            phase = np.exp(-1j * k.reshape(shp) * vel[ax] * dt)
            fh = np.fft.fft(f, axis=ax)
            if space.n % 2 == 0:
                # Nyquist mode cannot be shifted by a real operator; keep its cosine part
                idx = [slice(None)] * (space.dim + 1)
                idx[ax] = space.n // 2
                ph = phase[tuple(idx)]
                fh[tuple(idx)] = fh[tuple(idx)] * np.real(ph)
                phase = phase.copy()
                phase[tuple(idx)] = 1.0
            f = np.real(np.fft.ifft(fh * phase, axis=ax))
    elif scheme == "upwind":
        vmax = np.max(np.abs(vel))
        if dt * vmax > space.dx * (1 + 1e-12):
            raise CflViolation(f"upwind transport needs dt <= dx/|v|max = {space.dx / vmax:.3e}, got {dt:.3e}")
        for ax in range(space.dim):
            c = vel[ax] * dt / space.dx
            pos = np.maximum(c, 0.0)
            neg = np.minimum(c, 0.0)
            # flux through face i+1/2 in units of f * dx
            flux = pos * f + neg * np.roll(f, -1, axis=ax)
            f = f - (flux - np.roll(flux, 1, axis=ax))
    else:
        raise ValueError(f"unknown transport scheme {scheme!r}")
    return state.copy(f=f, t=state.t + dt)


# ----------------------------------------------------------------------------
# collision


@dataclass
class CollisionInfo:
    picard_iterations: int = 0
    pcg_iterations: int = 0
    skipped: list = field(default_factory=list)
    clipped_mass: float = 0.0


def collision_step(state: KineticState, params: VmfParams, dt, ops: Operators | None = None,
                   rho_floor=None, max_picard=2, picard_tol=1e-12, pcg_tol=1e-11,
                   info: CollisionInfo | None = None, anderson_depth=3) -> KineticState:
    """Backward-Euler step of ``d_t f = Q(f) / eps`` with ``Lam = Lam[f_new]`` by Picard iteration.

    ``max_picard=1`` freezes ``Lam = Lam[f_old]``.  The fixed-point map
    ``Lam -> Lam[f_new(Lam)]`` is accelerated per cell by Anderson mixing of
    depth ``anderson_depth`` (0 gives plain Picard).  Cells with ``rho <=
    rho_floor`` or a singular flux are left untouched and reported.
    """
    so3 = state.so3
    ops = ops or Operators(so3)
    info = info if info is not None else CollisionInfo()
    f_all = state.f.reshape(-1, so3.size)
    rho = f_all @ so3.weights
    if rho_floor is None:
        rho_floor = RHO_FLOOR_FACTOR * max(float(np.mean(rho)), 0.0)
    active = np.flatnonzero(rho > rho_floor)
    lam = flux_lambda(so3, f_all[active])
    good = np.ones(active.size, dtype=bool)
    Lam = np.zeros(lam.shape)
    for j in range(active.size):
        try:
            Lam[j] = polar_decompose(lam[j])
        except SingularFlux:
            good[j] = False
    skipped = list(np.setdiff1d(np.arange(f_all.shape[0]), active[good]))
    if skipped:
        log.info("collision skipped in %d cells at t=%.6g", len(skipped), state.t)
    info.skipped.extend(int(s) for s in skipped)
    idx = active[good]
    Lam = Lam[good]
    f_old = f_all[idx]
    tau = params.d * dt / state.eps
    g = None
    f_new = f_old
    hist_x, hist_g = [], []
    for it in range(max_picard if idx.size else 0):
        M = vmf_density(params, Lam, so3)
        f_new, g, its = implicit_relaxation(ops, M, f_old, tau, g0=g, tol=pcg_tol)
        info.pcg_iterations += its
        info.picard_iterations = it + 1
        if it + 1 == max_picard:
            break
        G = polar_decompose(flux_lambda(so3, f_new))
        change = np.max(np.abs(G - Lam))
        if change <= picard_tol:
            break
        hist_x.append(Lam.reshape(-1, 9))
        hist_g.append(G.reshape(-1, 9))
        Lam_next = polar_decompose(_anderson(hist_x[-anderson_depth - 1:], hist_g[-anderson_depth - 1:]).reshape(-1, 3, 3)) \
            if anderson_depth else G
        # keep g consistent with the refreshed equilibrium for the warm start
        g = f_new / vmf_density(params, Lam_next, so3)
        Lam = Lam_next
    out = f_all.copy()
    out[idx] = f_new
    neg = out < 0
    clipped = float(-np.sum(np.where(neg, out, 0.0) @ so3.weights) * state.space.cell_volume)
    if clipped > 0:
        out = np.where(neg, 0.0, out)
        info.clipped_mass += clipped
        total = float(np.sum(out @ so3.weights) * state.space.cell_volume)
        if clipped > CLIP_ABORT_FRACTION * total:
            raise SolverAbort(f"clipped negative mass {clipped:.3e} exceeds {CLIP_ABORT_FRACTION:g} of total",
                              time=state.t)
    return state.copy(f=out.reshape(state.f.shape), clipped_mass=state.clipped_mass + clipped,
                      skipped_cells=state.skipped_cells + len(skipped))


def _anderson(xs, gs, reg=1e-14):
    """Batched Anderson update from iterates ``xs`` and map values ``gs``, each ``(cells, n)``."""
    if len(xs) == 1:
        return gs[0]
    F = np.stack([g - x for x, g in zip(xs, gs)], axis=-1)  # (cells, n, k)
    G = np.stack(gs, axis=-1)
    dF = F[..., 1:] - F[..., :-1]
    dG = G[..., 1:] - G[..., :-1]
    A = np.swapaxes(dF, -1, -2) @ dF
    A = A + reg * np.eye(A.shape[-1]) * (1.0 + np.trace(A, axis1=-2, axis2=-1))[..., None, None]
    b = np.einsum("cnk,cn->ck", dF, F[..., -1])
    gamma = np.linalg.solve(A, b[..., None])[..., 0]
    return G[..., -1] - np.einsum("cnk,ck->cn", dG, gamma)


def dissipation_functional(so3: EulerGrid, f_cell, Lam, params: VmfParams, ops: Operators | None = None):
    """``-d || grad(f / M_Lam) ||^2_{L2(M)}``; equals ``int Q(f) f / M dA`` by adjointness."""
    ops = ops or Operators(so3)
    M = vmf_density(params, Lam, so3)
    G = ops.grad(np.asarray(f_cell) / M)
    return -params.d * integrate(so3, M * np.sum(G * G, axis=-1))


def local_equilibrium_distance(state: KineticState, params: VmfParams):
    """``sqrt(sum_cells dx int (f - rho M_{Lam[f]})^2 dA)``."""
    mom = moments(state)
    eq = mom.rho[..., None] * vmf_density(params, mom.Lam, state.so3)
    return float(np.sqrt(np.sum(integrate(state.so3, (state.f - eq) ** 2)) * state.space.cell_volume))


# ----------------------------------------------------------------------------
# driver


@dataclass
class SokbConfig:
    eps: float
    T: float
    dt: float
    output_every: int = 1
    transport: str = "spectral"
    max_picard: int = 2
    picard_tol: float = 1e-12
    pcg_tol: float = 1e-11
    reference_Lam: np.ndarray | None = None


@dataclass
class SokbTrajectory:
    times: list
    snapshots: list
    diagnostics: list
    moments: list


def run_sokb(config: SokbConfig, initial: KineticState, params: VmfParams,
             ops: Operators | None = None, callback=None) -> SokbTrajectory:
    """Strang splitting: half transport, collision, half transport.

    ``callback(state)`` is invoked at every output time (after recording).
    """
    ops = ops or Operators(initial.so3)
    state = initial.copy(eps=config.eps)
    traj = SokbTrajectory([], [], [], [])
    nsteps = int(round(config.T / config.dt))
    if abs(nsteps * config.dt - config.T) > 1e-9 * max(config.T, 1.0):
        raise ValueError("T must be an integer multiple of dt")
    rho_floor = RHO_FLOOR_FACTOR * float(np.mean(integrate(initial.so3, initial.f)))
    info = CollisionInfo()

    def record(s):
        mom = moments(s)
        cellvol = s.space.cell_volume
        H = 0.0
        flat_f = s.f.reshape(-1, s.so3.size)
        flat_L = mom.Lam.reshape(-1, 3, 3)
        H = float(np.sum(dissipation_functional(s.so3, flat_f, flat_L, params, ops)) * cellvol)
        row = {
            "t": float(s.t),
            "mass": s.total_mass(),
            "H": H,
            "eq_distance": local_equilibrium_distance(s, params),
            "clipped_mass": s.clipped_mass,
            "picard_iterations": info.picard_iterations,
            "pcg_iterations": info.pcg_iterations,
        }
        traj.times.append(float(s.t))
        traj.snapshots.append(s.f.copy())
        traj.diagnostics.append(row)
        mrow = {"t": float(s.t), "rho_mean": float(np.mean(mom.rho))}
        lam_mean = mom.lam.reshape(-1, 3, 3).mean(axis=0)
        for i in range(3):
            for j in range(3):
                mrow[f"lambda_{i + 1}{j + 1}"] = float(lam_mean[i, j])
        if config.reference_Lam is not None:
            mrow["Lam_distance"] = float(np.max(np.linalg.norm(mom.Lam - config.reference_Lam, axis=(-2, -1))))
        traj.moments.append(mrow)
        if callback is not None:
            callback(s)

    record(state)
    for n in range(1, nsteps + 1):
        state = transport_step(state, 0.5 * config.dt, config.transport)
        state = collision_step(state, params, config.dt, ops, rho_floor=rho_floor, max_picard=config.max_picard,
                               picard_tol=config.picard_tol, pcg_tol=config.pcg_tol, info=info)
        state = transport_step(state, 0.5 * config.dt, config.transport)
        state.t = n * config.dt
        if n % config.output_every == 0 or n == nsteps:
            record(state)
    return traj
