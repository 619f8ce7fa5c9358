"""Space-homogeneous relaxation of a perturbed equilibrium towards rho M_Lam.

    python scripts/kinetic_relaxation.py --T 20 --dt 0.5 --out relaxation.csv
"""

import argparse

import numpy as np

from attitude_hydro.field import Operators, build_grid
from attitude_hydro.io import write_csv
from attitude_hydro.sohb import SpatialGrid
from attitude_hydro.so3 import random_rotation
from attitude_hydro.sokb import KineticState, SokbConfig, run_sokb
from attitude_hydro.vmf import VmfParams, vmf_density


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--kappa", type=float, default=1.0)
    ap.add_argument("--eps", type=float, default=1.0)
    ap.add_argument("--T", type=float, default=20.0)
    ap.add_argument("--dt", type=float, default=0.5)
    ap.add_argument("--max-picard", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    grid = build_grid()
    params = VmfParams(args.kappa, 1.0)
    space = SpatialGrid(1, 16)
    M = vmf_density(params, random_rotation(rng), grid)
    # perturbation with a different preferred attitude keeps f positive
    f_cell = 0.7 * M + 0.3 * vmf_density(params, random_rotation(rng), grid)
    f = np.broadcast_to(f_cell, space.shape + (grid.size,)).copy()
    cfg = SokbConfig(eps=args.eps, T=args.T, dt=args.dt, max_picard=args.max_picard)
    traj = run_sokb(cfg, KineticState(space, grid, f, args.eps), params, Operators(grid))
    for r in traj.diagnostics:
        print(f"t={r['t']:7.3f}  eq_distance={r['eq_distance']:.3e}  H={r['H']:.3e}  mass={r['mass']:.15f}")
    if args.out:
        write_csv(args.out, traj.diagnostics)


if __name__ == "__main__":
    main()
