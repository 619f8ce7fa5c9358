"""Hilbert-expansion machinery and the eps-convergence study.

``f0 = rho0 M_{Lam0}`` is the local equilibrium built from a macroscopic
state, ``f1`` solves the constrained corrector equation
``L_{M_{Lam0}} f1 = P(d_t f0 + (A e1) . grad_x f0)`` and the remainder is
``f_R = (f - f0 - eps f1) / eps``.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import AttitudeHydroError, InconsistentRHS
from .field import EulerGrid, Operators, _batched_pcg, build_grid, integrate
from .gci import compute_coefficients
from .io import write_csv, write_json_atomic
from .sohb import (
    SpatialGrid,
    frame_speed_bound,
    frame_time_derivative,
    initial_frame_state,
    sample_spectral,
    spatial_gradient,
    step_frame,
)
from .sokb import KineticState, SokbConfig, run_sokb
from .so3 import dot_half, polar_decompose, tangent_projection, vee
from .vmf import VmfParams, vmf_density

INCONSISTENCY_TOL = 1e-8


class MarginViolation(AttitudeHydroError):
    """The stability margin d_star is not positive."""


# ----------------------------------------------------------------------------
# expansion terms


def build_f0(rho0, Lam0, so3: EulerGrid, params: VmfParams):
    return np.asarray(rho0, dtype=float)[..., None] * vmf_density(params, Lam0, so3)


def macro_derivatives(space: SpatialGrid, rho, Lam, scheme="central"):
    """Spatial derivatives of ``rho`` and tangent-projected derivatives of ``Lam``."""
    g_rho = spatial_gradient(space, rho, scheme)
    dLam = spatial_gradient(space, Lam, scheme)
    dLam = tangent_projection(Lam[..., None, :, :], dLam)
    return g_rho, dLam


def sohb_time_derivatives(rho, Lam, g_rho, dLam, coeffs):
    """``(d_t rho, d_t Lam)`` from the frame-form right-hand side (tangent-projected)."""
    drho, dL = frame_time_derivative(rho, Lam, g_rho, dLam, coeffs)
    return drho, tangent_projection(Lam, dL)


def corrector_rhs(so3: EulerGrid, params: VmfParams, rho, Lam, g_rho, dLam, drho, dLam_dt):
    """``d_t f0 + (A e1) . grad_x f0`` by the chain rule through ``(rho, Lam)``."""
    kappa = params.kappa
    A = so3.rotations
    M = vmf_density(params, Lam, so3)
    dM = lambda X: kappa * M * dot_half(A, X[..., None, :, :])
    R = drho[..., None] * M + rho[..., None] * dM(dLam_dt)
    v = A[:, :, 0]  # (nodes, 3) velocity A e1
    for i in range(3):
        R = R + v[:, i] * (g_rho[..., i, None] * M + rho[..., None] * dM(dLam[..., i, :, :]))
    return R


@dataclass
class ExpansionTerms:
    f0: np.ndarray
    f1: np.ndarray
    residual: float
    constraint_residual: float
    multipliers: np.ndarray  # (cells..., 4): mass component, three tangent components
    rhs: np.ndarray = field(repr=False, default=None)


def constraint_rows(so3: EulerGrid, M, Lam0):
    """Rows acting on ``g = f / M``: mass and the antisymmetric part of ``Lam0^T lambda``."""
    w = so3.weights
    b0 = w * M
    V = vee(np.swapaxes(Lam0, -1, -2)[..., None, :, :] @ so3.rotations)  # (..., nodes, 3)
    bk = (w * M)[..., None] * V
    return np.concatenate([b0[..., None], bk], axis=-1)  # (..., nodes, 4)


def solve_f1(space: SpatialGrid, so3: EulerGrid, rho0, Lam0, coeffs, params: VmfParams,
             ops: Operators | None = None, scheme="central", tol=1e-13, check=True,
             inconsistency_tol=INCONSISTENCY_TOL) -> ExpansionTerms:
    """Constrained corrector solve per cell via Lagrange multipliers.

    Solves ``-d K g + B^T nu = W R`` and ``B g = 0`` with ``f1 = M g``, where
    ``K`` is the weighted stiffness form and the four rows of ``B`` impose
    zero mass and ``P_T(lambda[f1]) = 0``.  ``K`` is made definite by adding
    ``u u^T`` with ``u`` the mass row, which leaves the constrained solution
    unchanged; the 4x4 Schur complement yields ``nu``.

    ``nu`` measures how far the right side is from the solvable subspace:
    ``nu[0] = int R dA`` and ``nu[1:]`` its pairing with the invariants.
    ``InconsistentRHS`` is raised when ``max |nu|`` exceeds
    ``inconsistency_tol * max(1, ||R||)``.
    """
    ops = ops or Operators(so3)
    rho0 = np.asarray(rho0, dtype=float)
    Lam0 = np.asarray(Lam0, dtype=float)
    g_rho, dLam = macro_derivatives(space, rho0, Lam0, scheme)
    drho, dLam_dt = sohb_time_derivatives(rho0, Lam0, g_rho, dLam, coeffs)
    R = corrector_rhs(so3, params, rho0, Lam0, g_rho, dLam, drho, dLam_dt)
    f0 = build_f0(rho0, Lam0, so3, params)
    M = f0 / rho0[..., None]

    shp = rho0.shape
    n = so3.size
    Rf = R.reshape(-1, n)
    Mf = M.reshape(-1, n)
    Lf = Lam0.reshape(-1, 3, 3)
    B = constraint_rows(so3, Mf, Lf)  # (C, n, 4)
    w = so3.weights
    u = w * Mf
    d = params.d

    # batched right sides: 4 constraint columns and W R
    rhs = np.concatenate([np.swapaxes(B, -1, -2), (w * Rf)[:, None, :]], axis=1)  # (C, 5, n)
    Mb = np.broadcast_to(Mf[:, None, :], rhs.shape)
    ub = np.broadcast_to(u[:, None, :], rhs.shape)

    def apply(x):
        return d * ops.weighted_laplacian_form(x, Mb) + ub * np.sum(ub * x, axis=-1, keepdims=True)

    def prec(r):
        return ops.solve_constant_coefficient(r, 1.0, d)

    Y, _ = _batched_pcg(apply, rhs, prec, np.zeros_like(rhs), tol, 5000)
    YB = Y[:, :4, :]  # (C, 4, n): (d K_r)^{-1} b_j
    YR = Y[:, 4, :]
    S = np.einsum("cnj,ckn->cjk", B, YB)  # B (dK_r)^{-1} B^T
    t = np.einsum("cnj,cn->cj", B, YR)
    nu = np.linalg.solve(S, t[..., None])[..., 0]
    g = np.einsum("cj,cjn->cn", nu, YB) - YR
    f1 = Mf * g

    # residuals of the saddle system in its original (unregularized) form
    res = -d * ops.weighted_laplacian_form(g, Mf) + np.einsum("cnj,cj->cn", B, nu) - w * Rf
    scale = np.linalg.norm(w * Rf, axis=-1)
    residual = float(np.max(np.linalg.norm(res, axis=-1) / np.where(scale > 0, scale, 1.0)))
    cons = np.einsum("cnj,cn->cj", B, g)
    terms = ExpansionTerms(
        f0=f0,
        f1=f1.reshape(shp + (n,)),
        residual=residual if np.any(scale > 0) else 0.0,
        constraint_residual=float(np.max(np.abs(cons))),
        multipliers=nu.reshape(shp + (4,)),
        rhs=R,
    )
    if check:
        rn = np.sqrt(integrate(so3, Rf * Rf))
        bad = np.abs(nu) > inconsistency_tol * np.maximum(1.0, rn)[:, None]
        if np.any(bad):
            raise InconsistentRHS(
                f"corrector right side has kernel component {np.max(np.abs(nu)):.3e} "
                f"(mass {np.max(np.abs(nu[:, 0])):.3e}, invariants {np.max(np.abs(nu[:, 1:])):.3e})"
            )
    return terms


# ----------------------------------------------------------------------------
# well-prepared data and remainder energies


def remainder_preset(name, so3: EulerGrid, params: VmfParams, Lam0, amplitude=0.1):
    """Bounded eps-independent remainder data.

    ``zero``; ``mass``: ``amplitude * M_{Lam0}``; ``fluctuation``:
    ``amplitude * M_{Lam0} (dot_half(A, Lam0 B) - mean)`` for a fixed symmetric
    ``B``, which has no mass and no tangential flux.
    """
    M = vmf_density(params, Lam0, so3)
    if name in (None, "zero"):
        return np.zeros_like(M)
    if name == "mass":
        return amplitude * M
    if name == "fluctuation":
        Bsym = np.diag([1.0, -0.5, -0.5])
        h = dot_half(so3.rotations, (Lam0 @ Bsym)[..., None, :, :])
        h = h - integrate(so3, M * h)[..., None]
        return amplitude * M * h
    raise ValueError(f"unknown remainder preset {name!r}")


def well_prepared_data(space, so3, params, coeffs, rho_in, Lam_in, eps, f_R_in="zero",
                       terms: ExpansionTerms | None = None, ops=None, amplitude=0.1) -> KineticState:
    terms = terms or solve_f1(space, so3, rho_in, Lam_in, coeffs, params, ops)
    fR = remainder_preset(f_R_in, so3, params, Lam_in, amplitude) if isinstance(f_R_in, (str, type(None))) else f_R_in
    f = terms.f0 + eps * terms.f1 + eps * fR
    return KineticState(space=space, so3=so3, f=f, eps=eps, t=0.0)


@dataclass
class EnergyReport:
    E: list
    D: list
    rho_R: np.ndarray


def _x_derivatives(space, F, order):
    """All mixed spatial derivatives of total order ``order`` (central differences)."""
    from itertools import combinations_with_replacement

    from .sohb import partial

    out = []
    for combo in combinations_with_replacement(range(space.dim), order):
        G = F
        for ax in combo:
            G = partial(space, G, ax)
        out.append(G)
    return out


def remainder_energy(f_eps, f0, f1, Lam0, eps, space: SpatialGrid, so3: EulerGrid, params: VmfParams,
                     s=0, ops: Operators | None = None) -> EnergyReport:
    """``E_k`` and ``D_k`` for ``k = 0..s`` with weight ``M_{Lam0}``."""
    ops = ops or Operators(so3)
    M = vmf_density(params, Lam0, so3)
    fR = (np.asarray(f_eps) - f0 - eps * f1) / eps
    rho_R = integrate(so3, fR)
    g = fR / M
    fluct = g - rho_R[..., None]
    vol = space.cell_volume
    E, D = [], []
    for k in range(s + 1):
        fl = _x_derivatives(space, fluct, k) if k else [fluct]
        rr = _x_derivatives(space, rho_R, k) if k else [rho_R]
        gg = _x_derivatives(space, g, k) if k else [g]
        e = sum(np.sum(integrate(so3, M * x * x)) for x in fl) * vol + sum(np.sum(x * x) for x in rr) * vol
        dsum = 0.0
        for x in gg:
            G = ops.grad(x)
            dsum += np.sum(integrate(so3, M * np.sum(G * G, axis=-1)))
        E.append(float(e))
        D.append(float(dsum * vol / eps))
    return EnergyReport(E=E, D=D, rho_R=rho_R)


def weighted_distance(f, f0, M, space: SpatialGrid, so3: EulerGrid):
    """``|| f - f0 ||`` in ``L2_{x,A}(1/M)``, i.e. of ``(f - f0)/M`` in ``L2(M)``."""
    return float(np.sqrt(np.sum(integrate(so3, (f - f0) ** 2 / M)) * space.cell_volume))


# ----------------------------------------------------------------------------
# convergence study


@dataclass
class StudyConfig:
    nu0: float = 1.0
    d: float = 1.0
    eps_list: tuple = (0.2, 0.1, 0.05, 0.025)
    cells: int = 64
    L: float = 1.0
    so3_shape: tuple = (25, 12, 25)
    T: float = 0.25
    output_interval: float = 0.05
    dt_ratio: float = 0.25  # kinetic dt = dt_ratio * eps
    reference_refine: int = 4
    reference_cfl: float = 0.2
    preset: str = "twist-lambda"
    preset_params: dict = field(default_factory=lambda: {"amplitude": 0.5, "wavenumber": 1, "rho_amp": 0.2})
    f_R_preset: str = "zero"
    f_R_amplitude: float = 0.1
    corrector_scheme: str = "central"
    allow_negative_margin: bool = False
    parallel: int = 1
    max_picard: int = 2


@dataclass
class StudyRun:
    eps: float
    err: float = float("nan")
    supE0: float = float("nan")
    intD0: float = float("nan")
    rows: list = field(default_factory=list)
    wall_time: float = 0.0
    failure: str | None = None


@dataclass
class ConvergenceStudy:
    eps: list
    err: list
    supE0: list
    intD0: list
    slope: float
    coefficients: dict
    runs: list
    config: dict


def fit_slope(eps, err):
    eps = np.asarray(eps, dtype=float)
    err = np.asarray(err, dtype=float)
    ok = np.isfinite(err) & (err > 0)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(eps[ok]), np.log(err[ok]), 1)[0])


def reference_sohb(cfg: StudyConfig, coeffs, times):
    """Frame-form solution on a refined grid with spectral derivatives and RK4,
    sampled onto the kinetic cells at ``times``."""
    fine = SpatialGrid(1, cfg.cells * cfg.reference_refine, cfg.L)
    fs = initial_frame_state(fine, cfg.preset, **cfg.preset_params)
    bound = frame_speed_bound(coeffs)
    out = []
    t_prev = 0.0
    for t in times:
        span = t - t_prev
        if span > 0:
            nsub = int(np.ceil(span * bound / (cfg.reference_cfl * fine.dx)))
            h = span / nsub
            for _ in range(nsub):
                fs = step_frame(fs, coeffs, h, cfl=cfg.reference_cfl, scheme="spectral", integrator="rk4",
                                dissipation=False)
        t_prev = t
        rho = sample_spectral(fs.rho, cfg.cells)
        Lam = polar_decompose(sample_spectral(fs.Lam, cfg.cells))
        out.append((rho, Lam))
    return out


def _run_member(args):
    cfg, eps, coeffs, params, refs, f1s, times = args
    space = SpatialGrid(1, cfg.cells, cfg.L)
    so3 = build_grid(*cfg.so3_shape)
    ops = Operators(so3)
    run = StudyRun(eps=eps)
    t0 = time.time()
    try:
        rho_in, Lam_in = refs[0]
        terms0 = ExpansionTerms(f0=build_f0(rho_in, Lam_in, so3, params), f1=f1s[0], residual=0.0,
                                constraint_residual=0.0, multipliers=None)
        init = well_prepared_data(space, so3, params, coeffs, rho_in, Lam_in, eps, cfg.f_R_preset,
                                  terms=terms0, amplitude=cfg.f_R_amplitude)
        dt = cfg.dt_ratio * eps
        every = int(round(cfg.output_interval / dt))
        if abs(every * dt - cfg.output_interval) > 1e-9:
            raise ValueError("output_interval must be a multiple of the kinetic time step")
        scfg = SokbConfig(eps=eps, T=cfg.T, dt=dt, output_every=every, max_picard=cfg.max_picard)
        traj = run_sokb(scfg, init, params, ops)
        for k, (t, f) in enumerate(zip(traj.times, traj.snapshots)):
            rho0, Lam0 = refs[k]
            f0 = build_f0(rho0, Lam0, so3, params)
            M = f0 / rho0[..., None]
            err = weighted_distance(f, f0, M, space, so3)
            rep = remainder_energy(f, f0, f1s[k], Lam0, eps, space, so3, params, 0, ops)
            row = {"t": t, "err": err, "E0": rep.E[0], "D0": rep.D[0]}
            row.update({k2: v for k2, v in traj.diagnostics[k].items() if k2 != "t"})
            run.rows.append(row)
        errs = [r["err"] for r in run.rows]
        run.err = max(errs)
        run.supE0 = max(r["E0"] for r in run.rows)
        ts = np.array([r["t"] for r in run.rows])
        run.intD0 = float(np.trapezoid([r["D0"] for r in run.rows], ts))
    except AttitudeHydroError as exc:
        run.failure = f"{type(exc).__name__}: {exc}"
    except (ValueError, FloatingPointError) as exc:
        run.failure = f"{type(exc).__name__}: {exc}"
    run.wall_time = time.time() - t0
    return run


def convergence_study(cfg: StudyConfig, log=print) -> ConvergenceStudy:
    eps_list = list(cfg.eps_list)
    if len(eps_list) < 3 or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps list must be strictly decreasing with at least 3 entries")
    params = VmfParams(cfg.nu0, cfg.d)
    so3 = build_grid(*cfg.so3_shape)
    ops = Operators(so3)
    coeffs = compute_coefficients(params, so3)
    log(f"coefficients: c1={coeffs.c1:.6g} c2={coeffs.c2:.6g} c3={coeffs.c3:.6g} c4={coeffs.c4:.6g} "
        f"lambda0={coeffs.lambda0:.6g} d_star={coeffs.d_star:.6g}")
    if coeffs.d_star <= 0 and not cfg.allow_negative_margin:
        raise MarginViolation(f"stability margin d_star = {coeffs.d_star:.6g} is not positive")
    n_out = int(round(cfg.T / cfg.output_interval))
    times = [k * cfg.output_interval for k in range(n_out + 1)]
    t0 = time.time()
    refs = reference_sohb(cfg, coeffs, times)
    log(f"reference solution: {time.time() - t0:.1f}s")
    space = SpatialGrid(1, cfg.cells, cfg.L)
    f1s = []
    t0 = time.time()
    for rho0, Lam0 in refs:
        terms = solve_f1(space, so3, rho0, Lam0, coeffs, params, ops, scheme=cfg.corrector_scheme, check=False)
        f1s.append(terms.f1)
    log(f"correctors: {time.time() - t0:.1f}s")
    jobs = [(cfg, eps, coeffs, params, refs, f1s, times) for eps in eps_list]
    if cfg.parallel > 1:
        with ProcessPoolExecutor(max_workers=cfg.parallel) as pool:
            runs = list(pool.map(_run_member, jobs))
    else:
        runs = []
        for job in jobs:
            runs.append(_run_member(job))
            r = runs[-1]
            log(f"eps={r.eps:g}: err={r.err:.4e} supE0={r.supE0:.4e} intD0={r.intD0:.4e} "
                f"({r.wall_time:.0f}s){' FAILED ' + r.failure if r.failure else ''}")
    runs.sort(key=lambda r: -r.eps)
    ok = [r for r in runs if r.failure is None]
    slope = fit_slope([r.eps for r in ok], [r.err for r in ok])
    return ConvergenceStudy(
        eps=[r.eps for r in runs],
        err=[r.err for r in runs],
        supE0=[r.supE0 for r in runs],
        intD0=[r.intD0 for r in runs],
        slope=slope,
        coefficients=asdict(coeffs),
        runs=runs,
        config=asdict(cfg),
    )


def write_study(study: ConvergenceStudy, outdir):
    """``study.csv``, ``study.json`` and one diagnostics CSV per eps."""
    os.makedirs(outdir, exist_ok=True)
    rows = [{"eps": e, "err": er, "supE0": se, "intD0": idd}
            for e, er, se, idd in zip(study.eps, study.err, study.supE0, study.intD0)]
    write_csv(os.path.join(outdir, "study.csv"), rows, ["eps", "err", "supE0", "intD0"])
    meta = {
        "slope": study.slope,
        "coefficients": study.coefficients,
        "config": study.config,
        "runs": [{"eps": r.eps, "err": r.err, "supE0": r.supE0, "intD0": r.intD0, "failure": r.failure,
                  "wall_time": r.wall_time} for r in study.runs],
    }
    write_json_atomic(os.path.join(outdir, "study.json"), meta)
    for r in study.runs:
        if r.rows:
            write_csv(os.path.join(outdir, f"diagnostics_eps_{r.eps:g}.csv"), r.rows)
