"""Frame-form constraint drift and stereographic-vs-frame discrepancy under grid refinement.

    python scripts/sohb_refinement.py --cells 64 128 256 512 --T 0.5
"""

import argparse

import numpy as np

from attitude_hydro.gci import transport_coefficients
from attitude_hydro.sohb import FrameState, SohbConfig, SpatialGrid, frame_l2_difference, initial_frame_state, run_sohb
from attitude_hydro.vmf import VmfParams


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cells", type=int, nargs="+", default=[64, 128, 256, 512])
    ap.add_argument("--T", type=float, default=0.5)
    ap.add_argument("--amplitude", type=float, default=0.5)
    ap.add_argument("--kappa", type=float, default=1.0)
    args = ap.parse_args()

    co = transport_coefficients(VmfParams(args.kappa, 1.0))
    prev = None
    print(f"{'cells':>6s} {'drift':>11s} {'order':>6s} {'stereo-frame':>13s} {'order':>6s}")
    for n in args.cells:
        grid = SpatialGrid(1, n)
        fs = initial_frame_state(grid, "twist-lambda", amplitude=args.amplitude)
        fr = run_sohb(SohbConfig(grid=grid, T=args.T, form="frame", output_every=10**9), fs, co)
        st = run_sohb(SohbConfig(grid=grid, T=args.T, form="stereo", output_every=10**9), fs, co)
        drift = fr.diagnostics[-1]["max_constraint_drift"]
        disc = frame_l2_difference(grid, FrameState(grid, fr.rho[-1], fr.Lam[-1], args.T),
                                   FrameState(grid, st.rho[-1], st.Lam[-1], args.T))
        if prev is None:
            print(f"{n:6d} {drift:11.3e} {'':>6s} {disc:13.3e}")
        else:
            print(f"{n:6d} {drift:11.3e} {np.log2(prev[0] / drift):6.2f} {disc:13.3e} {np.log2(prev[1] / disc):6.2f}")
        prev = (drift, disc)


if __name__ == "__main__":
    main()
