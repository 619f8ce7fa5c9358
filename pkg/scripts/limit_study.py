"""eps-convergence study of the kinetic solution towards the hydrodynamic reference.

    python scripts/limit_study.py --out study --parallel 4
    python scripts/limit_study.py --cells 32 --grid 9 6 9 --T 0.1   # quick look
"""

import argparse
import dataclasses

from attitude_hydro.limit import StudyConfig, convergence_study, write_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--eps", type=float, nargs="+", default=[0.2, 0.1, 0.05, 0.025])
    ap.add_argument("--cells", type=int, default=64)
    ap.add_argument("--grid", type=int, nargs=3, default=(25, 12, 25), metavar=("NA", "NB", "NG"))
    ap.add_argument("--T", type=float, default=0.25)
    ap.add_argument("--output-interval", type=float, default=0.05)
    ap.add_argument("--f-R", default="zero", choices=("zero", "mass", "fluctuation"))
    ap.add_argument("--parallel", type=int, default=1)
    ap.add_argument("--out", default="study")
    args = ap.parse_args()

    cfg = dataclasses.replace(
        StudyConfig(), eps_list=tuple(args.eps), cells=args.cells, so3_shape=tuple(args.grid), T=args.T,
        output_interval=args.output_interval, f_R_preset=args.f_R, parallel=args.parallel,
        allow_negative_margin=True,
    )
    study = convergence_study(cfg)
    write_study(study, args.out)
    print(f"fitted slope {study.slope:.3f}")
    for e, err, E, D in zip(study.eps, study.err, study.supE0, study.intD0):
        print(f"eps={e:<6g} err={err:.4e} supE0={E:.4e} intD0={D:.4e}")


if __name__ == "__main__":
    main()
