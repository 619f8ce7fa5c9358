"""Command-line entry point.

    attitude-hydro <mode> [--config PATH] [--out DIR] [--parallel N]

Exit codes: 0 success, 2 configuration error (including a refused limit
study), 3 numerical-invariant failure, 4 solver abort.  A ``manifest.json``
is written to the output directory on every run.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
import traceback
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .config import MODES, RunConfig, parse_config, parse_config_text
from .errors import AttitudeHydroError, ConfigError, SolverAbort
from .io import write_csv, write_json_atomic, write_snapshot

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_ABORT = 0, 2, 3, 4
THREADS_ENV = "ATTITUDE_HYDRO_THREADS"
MASS_TOL = 1e-10


@dataclass
class RunManifest:
    mode: str
    config: dict = field(default_factory=dict)
    version: str = __version__
    phases: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    exit_status: int = EXIT_OK

    def phase(self, name):
        return _Phase(self, name)


class _Phase:
    def __init__(self, manifest, name):
        self.m, self.name = manifest, name

    def __enter__(self):
        self.t0 = time.time()

    def __exit__(self, *exc):
        self.m.phases[self.name] = self.m.phases.get(self.name, 0.0) + time.time() - self.t0
        return False


def _params(cfg: RunConfig):
    from .vmf import VmfParams

    return VmfParams(nu0=cfg.physics.nu0, d=cfg.physics.d)


def _so3(cfg: RunConfig):
    from .field import build_grid

    return build_grid(cfg.so3.n_alpha, cfg.so3.n_beta, cfg.so3.n_gamma)


def _space(cfg: RunConfig):
    from .sohb import SpatialGrid

    return SpatialGrid(cfg.space.dim, cfg.space.cells, cfg.space.L, tuple(cfg.space.direction))


def _preset_params(cfg: RunConfig):
    i = cfg.initial
    return dict(rho0=i.rho0, rho_amp=i.rho_amp, amplitude=i.amplitude, wavenumber=i.wavenumber,
                width=i.width, axis=tuple(i.axis))


# ----------------------------------------------------------------------------
# modes


def run_coefficients(cfg: RunConfig, out, man: RunManifest):
    from .gci import compute_coefficients
    from .vmf import VmfParams

    grid = _so3(cfg)
    rows = []
    nus = cfg.coefficients.nu0_list or (cfg.physics.nu0,)
    with man.phase("coefficients"):
        for nu0 in nus:
            co = compute_coefficients(VmfParams(nu0, cfg.physics.d), grid, cfg.theta.n)
            rows.append({k: getattr(co, k) for k in ("kappa", "Z", "c1", "c2", "c3", "c4", "lambda0", "d_star")})
    write_csv(os.path.join(out, "coefficients.csv"), rows)
    cols = list(rows[0].keys())
    print(",".join(cols))
    for r in rows:
        print(",".join(repr(float(r[c])) for c in cols))
    man.diagnostics["coefficients"] = rows
    bad = [r for r in rows if not (0 < r["c1"] < 1 and r["lambda0"] > 0)]
    if bad:
        man.failures.append(f"coefficient invariants violated at kappa={[r['kappa'] for r in bad]}")
        return EXIT_INVARIANT
    return EXIT_OK


def _write_sohb(out, traj, grid):
    write_csv(os.path.join(out, "sohb.csv"), traj.diagnostics)
    names = ["rho"] + [f"Lam{i + 1}{j + 1}" for i in range(3) for j in range(3)]
    for k, (t, rho, Lam) in enumerate(zip(traj.times, traj.rho, traj.Lam)):
        arr = np.concatenate([rho[..., None], Lam.reshape(rho.shape + (9,))], axis=-1)
        write_snapshot(os.path.join(out, f"sohb_snapshot_{k:04d}"), arr, names, t=t,
                       grid={"dim": grid.dim, "cells": grid.n, "L": grid.L})


def run_simulate_sohb(cfg: RunConfig, out, man: RunManifest):
    from .gci import transport_coefficients
    from .sohb import SohbConfig, run_sohb

    with man.phase("coefficients"):
        co = transport_coefficients(_params(cfg), cfg.theta.n)
    man.diagnostics["coefficients"] = asdict(co)
    grid = _space(cfg)
    scfg = SohbConfig(grid=grid, T=cfg.time.T, cfl=cfg.time.cfl, form=cfg.sohb.form, scheme=cfg.sohb.scheme,
                      integrator=cfg.sohb.integrator, dissipation=cfg.sohb.dissipation,
                      output_every=cfg.time.output_every, preset=cfg.initial.preset,
                      preset_params=_preset_params(cfg))
    try:
        with man.phase("simulate"):
            traj = run_sohb(scfg, coeffs=co)
    except SolverAbort as exc:
        traj = getattr(exc, "trajectory", None)
        if traj is not None:
            _write_sohb(out, traj, grid)
        man.failures.append(str(exc))
        return EXIT_ABORT
    _write_sohb(out, traj, grid)
    m0 = traj.diagnostics[0]["mass"]
    drift = max(abs(r["mass"] - m0) for r in traj.diagnostics) / abs(m0)
    man.diagnostics.update(final=traj.diagnostics[-1], relative_mass_drift=drift, steps_recorded=len(traj.times))
    if drift > MASS_TOL:
        man.failures.append(f"mass drift {drift:.3e} exceeds {MASS_TOL:g}")
        return EXIT_INVARIANT
    return EXIT_OK


def run_simulate_sokb(cfg: RunConfig, out, man: RunManifest):
    from .field import Operators
    from .gci import transport_coefficients
    from .limit import build_f0, well_prepared_data
    from .sohb import initial_frame_state
    from .sokb import KineticState, SokbConfig, run_sokb

    params = _params(cfg)
    so3 = _so3(cfg)
    ops = Operators(so3)
    space = _space(cfg)
    eps = cfg.sokb.eps
    dt = cfg.time.dt or space.dx
    if cfg.sokb.transport == "upwind" and dt > space.dx:
        raise ConfigError(f"[time] dt = {dt:g} exceeds dx = {space.dx:g} required by upwind transport")
    n = int(round(cfg.time.T / dt))
    if n < 1 or abs(n * dt - cfg.time.T) > 1e-9 * cfg.time.T:
        raise ConfigError(f"[time] T = {cfg.time.T:g} is not a multiple of dt = {dt:g}")
    fs = initial_frame_state(space, cfg.initial.preset, **_preset_params(cfg))
    with man.phase("initial data"):
        if cfg.sokb.initial == "well-prepared":
            co = transport_coefficients(params, cfg.theta.n)
            init = well_prepared_data(space, so3, params, co, fs.rho, fs.Lam, eps, cfg.sokb.f_R_preset,
                                      ops=ops, amplitude=cfg.sokb.f_R_amplitude)
        else:
            init = KineticState(space, so3, build_f0(fs.rho, fs.Lam, so3, params), eps=eps)
    m0 = init.total_mass()
    scfg = SokbConfig(eps=eps, T=cfg.time.T, dt=dt, output_every=cfg.time.output_every,
                      transport=cfg.sokb.transport, max_picard=cfg.sokb.max_picard, reference_Lam=fs.Lam)
    try:
        with man.phase("simulate"):
            traj = run_sokb(scfg, init, params, ops)
    except SolverAbort as exc:
        man.failures.append(str(exc))
        return EXIT_ABORT
    write_csv(os.path.join(out, "sokb.csv"), traj.diagnostics)
    write_csv(os.path.join(out, "moments.csv"), traj.moments)
    names = ["f"]
    meta_grid = {"space": {"dim": space.dim, "cells": space.n, "L": space.L},
                 "so3": {"n_alpha": so3.n_alpha, "n_beta": so3.n_beta, "n_gamma": so3.n_gamma}}
    for k, (t, f) in enumerate(zip(traj.times, traj.snapshots)):
        write_snapshot(os.path.join(out, f"sokb_snapshot_{k:04d}"), f.reshape(-1, so3.size), names,
                       t=t, eps=eps, layout="cells x nodes", grid=meta_grid)
    drift = max(abs(r["mass"] - m0) for r in traj.diagnostics) / abs(m0)
    Hmax = max(r["H"] for r in traj.diagnostics)
    man.diagnostics.update(final=traj.diagnostics[-1], relative_mass_drift=drift, max_H=Hmax)
    if drift > MASS_TOL:
        man.failures.append(f"mass drift {drift:.3e} exceeds {MASS_TOL:g}")
        return EXIT_INVARIANT
    if Hmax > 1e-10:
        man.failures.append(f"dissipation functional positive: {Hmax:.3e}")
        return EXIT_INVARIANT
    return EXIT_OK


GNUPLOT_TEMPLATE = """# gnuplot -p study.gp
set datafile separator ','
set logscale xy
set xlabel 'eps'
set ylabel 'sup_t error'
set key left top
plot 'study.csv' every ::1 using 1:2 with linespoints title 'err(eps)', \\
     'study.csv' every ::1::1 using 1:2 with lines lt 0 title '', \\
     x * {scale} with lines dashtype 2 title 'slope 1'
"""


def run_limit_study(cfg: RunConfig, out, man: RunManifest, log=print):
    from .limit import MarginViolation, StudyConfig, convergence_study, write_study

    scfg = StudyConfig(
        nu0=cfg.physics.nu0, d=cfg.physics.d, eps_list=tuple(cfg.limit.eps_list), cells=cfg.space.cells,
        L=cfg.space.L, so3_shape=(cfg.so3.n_alpha, cfg.so3.n_beta, cfg.so3.n_gamma), T=cfg.limit.T,
        output_interval=cfg.limit.output_interval, dt_ratio=cfg.limit.dt_ratio,
        reference_refine=cfg.limit.reference_refine, reference_cfl=cfg.limit.reference_cfl,
        preset=cfg.initial.preset, preset_params=_preset_params(cfg), f_R_preset=cfg.sokb.f_R_preset,
        f_R_amplitude=cfg.sokb.f_R_amplitude, allow_negative_margin=cfg.limit.allow_negative_margin,
        parallel=cfg.limit.parallel, max_picard=cfg.sokb.max_picard,
    )
    if cfg.space.dim != 1:
        raise ConfigError("[space] dim: the limit study is one-dimensional")
    try:
        with man.phase("study"):
            study = convergence_study(scfg, log=log)
    except MarginViolation as exc:
        msg = f"limit study refused: {exc}; set [limit] allow_negative_margin = true to run anyway"
        print(msg, file=sys.stderr)
        man.failures.append(msg)
        return EXIT_CONFIG
    write_study(study, out)
    finite = [e for e in study.err if np.isfinite(e)]
    with open(os.path.join(out, "study.gp"), "w") as fh:
        fh.write(GNUPLOT_TEMPLATE.format(scale=repr(max(finite) / study.eps[0]) if finite else "1.0"))
    man.diagnostics.update(slope=study.slope, err=study.err, supE0=study.supE0, intD0=study.intD0,
                           d_star=study.coefficients["d_star"])
    failed = [f"eps={r.eps:g}: {r.failure}" for r in study.runs if r.failure]
    man.failures.extend(failed)
    return EXIT_ABORT if failed else EXIT_OK


def run_verify(cfg: RunConfig, out, man: RunManifest, log=print):
    from .verify import run_suite

    with man.phase("verify"):
        results = run_suite(long=cfg.verify.long, log=log)
    rows = [{"check": r.name, "passed": r.passed, "runtime": round(r.runtime, 3), "summary": r.summary}
            for r in results]
    write_csv(os.path.join(out, "verify.csv"), rows)
    man.diagnostics["checks"] = rows
    failed = [r.name for r in results if not r.passed]
    man.failures.extend(f"check failed: {n}" for n in failed)
    log(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_INVARIANT if failed else EXIT_OK


DISPATCH = {
    "coefficients": run_coefficients,
    "simulate-sohb": run_simulate_sohb,
    "simulate-sokb": run_simulate_sokb,
    "limit-study": run_limit_study,
    "verify": run_verify,
}


def dispatch(cfg: RunConfig, out) -> tuple[int, RunManifest]:
    man = RunManifest(mode=cfg.mode, config=cfg.as_dict())
    os.makedirs(out, exist_ok=True)
    t0 = time.time()
    try:
        status = DISPATCH[cfg.mode](cfg, out, man)
    except ConfigError as exc:
        man.failures.append(f"ConfigError: {exc}")
        print(f"configuration error: {exc}", file=sys.stderr)
        status = EXIT_CONFIG
    except SolverAbort as exc:
        man.failures.append(f"SolverAbort: {exc}")
        print(f"solver abort: {exc}", file=sys.stderr)
        status = EXIT_ABORT
    except AttitudeHydroError as exc:
        man.failures.append(f"{type(exc).__name__}: {exc}")
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        status = EXIT_INVARIANT
    except Exception as exc:  # noqa: BLE001 - the manifest must still be written
        man.failures.append(f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}")
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        status = EXIT_ABORT
    finally:
        man.phases["total"] = time.time() - t0
    man.exit_status = status
    write_json_atomic(os.path.join(out, "manifest.json"), asdict(man))
    return status, man


def build_parser():
    p = argparse.ArgumentParser(prog="attitude-hydro", description=__doc__.splitlines()[0])
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", help="INI configuration file (defaults used when omitted)")
    p.add_argument("--out", help="output directory (overrides [run] output)")
    p.add_argument("--parallel", type=int, help="worker processes for the eps sweep")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = args.out
    try:
        cfg = parse_config(args.config, args.mode) if args.config else parse_config_text("", args.mode)
        if args.parallel is not None:
            if args.parallel < 1:
                raise ConfigError("--parallel must be at least 1")
            cfg.limit.parallel = args.parallel
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                cfg.limit.parallel = max(1, int(env))
            except ValueError:
                raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        out = out or "out"
        man = RunManifest(mode=args.mode, failures=[f"ConfigError: {exc}"], exit_status=EXIT_CONFIG)
        write_json_atomic(os.path.join(out, "manifest.json"), asdict(man))
        return EXIT_CONFIG
    status, _ = dispatch(cfg, out or cfg.run.output)
    return status


if __name__ == "__main__":
    sys.exit(main())
