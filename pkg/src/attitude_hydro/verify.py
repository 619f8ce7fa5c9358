"""Property checks with fixed tolerances and runtime budgets.

Each ``check_*`` returns a :class:`CheckResult`.  The ``verify`` CLI mode
runs the fast identity checks; ``run_suite(long=True)`` adds the long studies.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InconsistentRHS, SolverAbort
from .field import Operators, build_grid, integrate, poincare_constant
from .gci import (
    compute_c1,
    find_positive_margin,
    gci_verify,
    psi0_ode_residual,
    solve_psi0,
    transport_coefficients,
)
from .so3 import cross_matrix, dot_half, polar_decompose, random_rotation, tangent_projection
from .vmf import VmfParams, attitude_derivatives, flux_lambda, vmf_density


@dataclass
class CheckResult:
    name: str
    passed: bool
    summary: str
    runtime: float = 0.0
    budget: float = float("inf")
    details: dict = field(default_factory=dict)

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag}  {self.name}: {self.summary} [{self.runtime:.1f}s / budget {self.budget:g}s]"


def _timed(name, budget, fn):
    t0 = time.time()
    ok, summary, details = fn()
    rt = time.time() - t0
    within = rt <= budget
    if not within:
        summary += "; runtime over budget"
    return CheckResult(name, bool(ok and within), summary, rt, budget, details)


def _smooth_field(rng, grid, Lam):
    """Band-limited random function of ``A`` (quadratic in the entries of ``A``)."""
    B, C = rng.standard_normal((2, 3, 3))
    A = grid.rotations
    return dot_half(A, Lam @ B) + 0.5 * dot_half(A, C) ** 2


# ----------------------------------------------------------------------------
# identity checks


def check_projection_identity(grid=None, n_cases=20, seed=0, tol=1e-8, budget=10.0):
    def run():
        g = grid or build_grid()
        ops = Operators(g)
        rng = np.random.default_rng(seed)
        worst = 0.0
        A = g.rotations
        for _ in range(n_cases):
            Mm = rng.standard_normal((3, 3))
            w = ops.grad(dot_half(A, Mm))
            recon = A @ cross_matrix(w)
            worst = max(worst, float(np.max(np.abs(recon - tangent_projection(A, Mm)))))
        return worst <= tol, f"max |A[grad]x - P_T(M)| = {worst:.2e} (tol {tol:g})", {"max_error": worst}

    return _timed("projection identity", budget, run)


def check_consistency_relation(grid=None, kappas=(0.5, 1.0, 2.0, 4.0), n_lam=10, seed=1, tol=1e-6, budget=30.0):
    def run():
        g = grid or build_grid()
        rng = np.random.default_rng(seed)
        worst = 0.0
        c1s = {}
        for kappa in kappas:
            p = VmfParams(nu0=kappa, d=1.0)
            c1 = compute_c1(p)
            c1s[kappa] = c1
            Lams = random_rotation(rng, n_lam)
            lam = flux_lambda(g, vmf_density(p, Lams, g))
            worst = max(worst, float(np.max(np.abs(lam - c1 * Lams))))
        in_range = all(0 < c < 1 for c in c1s.values())
        summ = (f"max |lambda[M] - c1 Lam| = {worst:.2e} (tol {tol:g}); c1 in (0,1): {in_range} "
                f"[{', '.join(f'{k:g}:{v:.4f}' for k, v in c1s.items())}]")
        return worst <= tol and in_range, summ, {"max_error": worst, "c1": c1s}

    return _timed("consistency relation", budget, run)


def check_linearization(grid=None, n_cases=20, seed=2, h=1e-4, tol1=1e-5, tol2=1e-3, budget=30.0):
    def run():
        g = grid or build_grid()
        rng = np.random.default_rng(seed)
        p = VmfParams(1.0, 1.0)
        c1 = compute_c1(p)
        e1 = e2 = 0.0
        for _ in range(n_cases):
            rho0 = rng.uniform(0.5, 2.0)
            Lam0 = random_rotation(rng)
            M = vmf_density(p, Lam0, g)
            f0 = rho0 * M
            f1 = M * _smooth_field(rng, g, Lam0)
            Lam_at = lambda e: polar_decompose(flux_lambda(g, f0 + e * f1))
            first, second = attitude_derivatives(g, rho0, Lam0, f1, c1)
            lp, lm, l0 = Lam_at(h), Lam_at(-h), Lam_at(0.0)
            e1 = max(e1, float(np.max(np.abs((lp - lm) / (2 * h) - first))))
            e2 = max(e2, float(np.max(np.abs((lp - 2 * l0 + lm) / h**2 - second))))
        ok = e1 <= tol1 and e2 <= tol2
        return ok, f"first-derivative error {e1:.2e} (tol {tol1:g}), second {e2:.2e} (tol {tol2:g})", \
            {"first": e1, "second": e2}

    return _timed("linearization", budget, run)


def check_dissipation(grid=None, n_fields=200, seed=3, tol=1e-10, mass_tol=1e-12, budget=10.0):
    def run():
        g = grid or build_grid()
        ops = Operators(g)
        rng = np.random.default_rng(seed)
        p = VmfParams(1.0, 1.0)
        Hs, masses, const = [], [], []
        batch = 50
        for start in range(0, n_fields, batch):
            n = min(batch, n_fields - start)
            Lams = random_rotation(rng, n)
            M0 = vmf_density(p, Lams, g)
            xi = np.stack([_smooth_field(rng, g, L) for L in Lams])
            xi = xi / np.max(np.abs(xi), axis=-1, keepdims=True)
            f = M0 * (1.0 + 0.5 * xi)
            M = vmf_density(p, polar_decompose(flux_lambda(g, f)), g)
            Qf = ops.fokker_planck(f, M, p.d)
            Hs.append(integrate(g, Qf * f / M))
            masses.append(np.abs(integrate(g, Qf)))
            c = rng.uniform(0.5, 2.0, n)[:, None] * M
            const.append(np.abs(integrate(g, ops.fokker_planck(c, M, p.d) * c / M)))
        H = np.concatenate(Hs)
        mass = float(np.max(np.concatenate(masses)))
        cst = float(np.max(np.concatenate(const)))
        ok = np.all(H < -tol) and cst <= tol and mass <= mass_tol
        return ok, (f"max H = {H.max():.2e} over {n_fields} fields, |H| at f/M const = {cst:.1e} (tol {tol:g}), "
                    f"max |mass of Lf| = {mass:.1e} (tol {mass_tol:g})"), \
            {"max_H": float(H.max()), "const_H": cst, "mass": mass}

    return _timed("dissipation", budget, run)


def check_gci_orthogonality(grid=None, seed=4, tol=1e-5, witness_tol=1e-3, budget=60.0):
    def run():
        g = grid or build_grid()
        p = VmfParams(1.0, 1.0)
        sols = [solve_psi0(p, N) for N in (1024, 2048, 4096)]
        gci = sols[-1]
        res = max(gci.residual, psi0_ode_residual(gci))
        d1 = np.max(np.abs(sols[0].u - sols[1].u[::2]))
        d2 = np.max(np.abs(sols[1].u[::2] - sols[2].u[::4]))
        order = float(np.log2(d1 / d2))
        rng = np.random.default_rng(seed)
        rep = gci_verify(g, random_rotation(rng), p, gci, rng, tol=tol, witness_tol=witness_tol)
        ok = rep.passed and res <= 1e-6 and 1.8 <= order <= 2.2
        summ = (f"max constrained {rep.max_constrained:.2e} (tol {tol:g}), witness {rep.witness:.2e} "
                f"(> {witness_tol:g}), psi0 residual {res:.1e}, self-convergence order {order:.2f}")
        return ok, summ, {"max_constrained": rep.max_constrained, "witness": rep.witness,
                          "residual": res, "order": order}

    return _timed("GCI orthogonality", budget, run)


def check_symmetric_hyperbolicity(n_states=1000, seed=5, tol=1e-14, budget=5.0):
    from .sohb import assemble_matrices

    def run():
        rng = np.random.default_rng(seed)
        co = transport_coefficients(VmfParams(1.0, 1.0))
        U = np.concatenate([rng.uniform(0.05, 5.0, (n_states, 1)), rng.uniform(-5, 5, (n_states, 6))], axis=1)
        A0, As = assemble_matrices(U, co)
        asym = 0.0
        for A in As:
            scale = np.maximum(1.0, np.max(np.abs(A), axis=(-2, -1)))
            asym = max(asym, float(np.max(np.max(np.abs(A - np.swapaxes(A, -1, -2)), axis=(-2, -1)) / scale)))
        sym0 = float(np.max(np.abs(A0 - np.swapaxes(A0, -1, -2))))
        min_eig = float(np.min(np.linalg.eigvalsh(A0)))
        ok = asym <= tol and sym0 <= tol and min_eig > 0
        return ok, f"max asymmetry {asym:.1e} (tol {tol:g}), min eig(A0) = {min_eig:.2e}", \
            {"asymmetry": asym, "min_eig": min_eig}

    return _timed("symmetric hyperbolicity", budget, run)


def check_corrector_solvability(seed=6, cells=16, budget=120.0):
    from .limit import solve_f1
    from .sohb import SpatialGrid, initial_frame_state

    def run():
        g = build_grid()
        ops = Operators(g)
        p = VmfParams(1.0, 1.0)
        co = transport_coefficients(p)
        space = SpatialGrid(1, cells, 1.0)
        fs = initial_frame_state(space, "twist-lambda", amplitude=0.5, wavenumber=1, rho_amp=0.2)
        terms = solve_f1(space, g, fs.rho, fs.Lam, co, p, ops)
        mass = float(np.max(np.abs(integrate(g, terms.f1))))
        # constant data give f1 = 0
        const = initial_frame_state(space, "constant")
        t0 = solve_f1(space, g, const.rho, const.Lam, co, p, ops)
        zero = float(np.max(np.abs(t0.f1)))
        raised = False
        try:
            solve_f1(space, g, fs.rho, fs.Lam, replace(co, c1=co.c1 * 1.01), p, ops)
        except InconsistentRHS:
            raised = True
        ok = terms.residual <= 1e-9 and terms.constraint_residual <= 1e-8 and mass <= 1e-10 and raised \
            and zero <= 1e-12
        summ = (f"residual {terms.residual:.1e} (tol 1e-9), constraints {terms.constraint_residual:.1e} "
                f"(tol 1e-8), kernel component {np.max(np.abs(terms.multipliers)):.1e}, "
                f"perturbed c1 raises: {raised}")
        return ok, summ, {"residual": terms.residual, "constraints": terms.constraint_residual, "raised": raised}

    return _timed("corrector solvability", budget, run)


# ----------------------------------------------------------------------------
# long studies


def observed_orders(errors):
    e = np.asarray(errors, dtype=float)
    return [float(np.log2(a / b)) for a, b in zip(e, e[1:])]


def check_constraint_transport(cells=(64, 128, 256, 512), T=0.5, budget=300.0, log=None):
    from .sohb import SohbConfig, SpatialGrid, frame_l2_difference, initial_frame_state, run_sohb, FrameState

    def run():
        co = transport_coefficients(VmfParams(1.0, 1.0))
        drift, disc = [], []
        for n in cells:
            grid = SpatialGrid(1, n, 1.0)
            fs = initial_frame_state(grid, "twist-lambda")
            fr = run_sohb(SohbConfig(grid=grid, T=T, form="frame", output_every=10**9), fs, co)
            st = run_sohb(SohbConfig(grid=grid, T=T, form="stereo", output_every=10**9), fs, co)
            drift.append(fr.diagnostics[-1]["max_constraint_drift"])
            a = FrameState(grid, fr.rho[-1], fr.Lam[-1], T)
            b = FrameState(grid, st.rho[-1], st.Lam[-1], T)
            disc.append(frame_l2_difference(grid, a, b))
            if log:
                log(f"  cells={n}: drift {drift[-1]:.3e}, stereo-vs-frame {disc[-1]:.3e}")
        od, oc = observed_orders(drift), observed_orders(disc)
        ok_d = all(o >= 1 for o in od)
        ok_c = all(o >= 1 for o in oc)
        summ = (f"frame drift {', '.join(f'{x:.2e}' for x in drift)} orders {', '.join(f'{o:.2f}' for o in od)} "
                f"[{'ok' if ok_d else 'fail'}]; stereo-vs-frame {', '.join(f'{x:.2e}' for x in disc)} orders "
                f"{', '.join(f'{o:.2f}' for o in oc)} [{'ok' if ok_c else 'fail'}]")
        return ok_d and ok_c, summ, {"drift": drift, "drift_orders": od, "discrepancy": disc,
                                     "discrepancy_orders": oc}

    return _timed("constraint transport", budget, run)


def check_kinetic_relaxation(budget=120.0, seed=7):
    from .sohb import SpatialGrid, initial_frame_state
    from .sokb import KineticState, SokbConfig, run_sokb
    from .limit import build_f0

    def run():
        g = build_grid()
        ops = Operators(g)
        p = VmfParams(1.0, 1.0)
        rng = np.random.default_rng(seed)
        space = SpatialGrid(1, 16, 1.0)
        Lam = random_rotation(rng)
        M = vmf_density(p, Lam, g)
        xi = _smooth_field(rng, g, Lam)
        f_cell = M * (1.0 + 0.5 * xi / np.max(np.abs(xi)))
        f = np.broadcast_to(f_cell, space.shape + (g.size,)).copy()
        init = KineticState(space, g, f, eps=1.0)
        m0 = init.total_mass()
        traj = run_sokb(SokbConfig(eps=1.0, T=20.0, dt=0.5, output_every=1), init, p, ops)
        mass_err = max(abs(r["mass"] - m0) / m0 for r in traj.diagnostics)
        dist = traj.diagnostics[-1]["eq_distance"]
        # stiff case: eps = 1e-3 with dt = dx on twist data
        fs = initial_frame_state(space, "twist-lambda")
        stiff0 = KineticState(space, g, build_f0(fs.rho, fs.Lam, g, p), eps=1e-3)
        ms = stiff0.total_mass()
        stable = True
        try:
            st = run_sokb(SokbConfig(eps=1e-3, T=4 * space.dx, dt=space.dx, output_every=1), stiff0, p, ops)
            last = st.snapshots[-1]
            stable = bool(np.all(np.isfinite(last))) and abs(st.diagnostics[-1]["mass"] - ms) <= 1e-12 * ms
            stiff_mass = max(abs(r["mass"] - ms) / ms for r in st.diagnostics)
        except SolverAbort:
            stable, stiff_mass = False, float("nan")
        ok = dist < 1e-6 and mass_err <= 1e-12 and stable
        summ = (f"terminal distance {dist:.2e} (tol 1e-6), max relative mass error {mass_err:.1e} (tol 1e-12), "
                f"stiff eps=1e-3 dt=dx stable: {stable} (mass error {stiff_mass:.1e})")
        return ok, summ, {"distance": dist, "mass_error": mass_err, "stiff_stable": stable}

    return _timed("kinetic relaxation", budget, run)


def check_hydrodynamic_limit(budget=1800.0, log=print, outdir=None, cfg=None):
    from .limit import StudyConfig, convergence_study, write_study

    def run():
        g = build_grid()
        t0 = time.time()
        lam_cache = {}

        def lambda0_of_kappa(kappa):
            if kappa not in lam_cache:
                lam_cache[kappa] = poincare_constant(g, np.eye(3), VmfParams(kappa, 1.0))
            return lam_cache[kappa]

        found = find_positive_margin(1.0, lambda0_of_kappa)
        ratios = {k: compute_c1(VmfParams(k, 1.0)) * v / k for k, v in lam_cache.items()}
        if log:
            log(f"  margin scan ({time.time() - t0:.0f}s): positive margin found: {found is not None}; "
                f"c1*lambda0/kappa = {', '.join(f'{k:g}:{v:.3f}' for k, v in sorted(ratios.items()))} "
                f"(needs > {25 * 3 ** 0.25:.2f})")
        study_cfg = cfg or StudyConfig(allow_negative_margin=True)
        if found is not None:
            study_cfg = replace(study_cfg, d=found[0], nu0=1.0, allow_negative_margin=False)
        study = convergence_study(study_cfg, log=(lambda m: log("  " + m)) if log else (lambda m: None))
        if outdir:
            write_study(study, outdir)
        ok_runs = all(r.failure is None for r in study.runs)
        slope_ok = 0.8 <= study.slope <= 1.2
        E = np.array(study.supE0)
        D = np.array(study.intD0)
        ratio_E = float(E.max() / E.min()) if E.min() > 0 else float("inf")
        ratio_D = float(D.max() / D.min()) if D.min() > 0 else float("inf")
        bounded = ratio_E <= 3 and ratio_D <= 3
        margin_ok = found is not None
        summ = (f"positive margin attainable: {margin_ok}; slope {study.slope:.3f} (target [0.8, 1.2]) "
                f"errors {', '.join(f'{e:.3e}' for e in study.err)}; supE0 ratio {ratio_E:.2f}, intD0 ratio "
                f"{ratio_D:.2f} (<= 3); all runs completed: {ok_runs}")
        return margin_ok and slope_ok and bounded and ok_runs, summ, {
            "slope": study.slope, "err": study.err, "supE0": study.supE0, "intD0": study.intD0,
            "margin_found": found, "ratios": ratios, "study": study}

    return _timed("hydrodynamic limit", budget, run)


FAST_CHECKS = (
    check_projection_identity,
    check_consistency_relation,
    check_linearization,
    check_dissipation,
    check_gci_orthogonality,
    check_symmetric_hyperbolicity,
    check_corrector_solvability,
)

LONG_CHECKS = (check_constraint_transport, check_kinetic_relaxation, check_hydrodynamic_limit)


def run_suite(long=False, log=print):
    results = []
    for chk in FAST_CHECKS + (LONG_CHECKS if long else ()):
        r = chk()
        results.append(r)
        if log:
            log(r.line())
    return results
