"""Coefficient table c1..c4, lambda0 and the stability margin over a range of kappa.

    python scripts/coefficient_table.py --kappa 0.25 0.5 1 2 4 --out coefficients.csv
"""

import argparse

from attitude_hydro.field import build_grid
from attitude_hydro.gci import compute_coefficients
from attitude_hydro.io import write_csv
from attitude_hydro.vmf import VmfParams

COLUMNS = ("kappa", "Z", "c1", "c2", "c3", "c4", "lambda0", "d_star")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--kappa", type=float, nargs="+", default=[0.5, 1.0, 2.0, 4.0])
    ap.add_argument("--d", type=float, default=1.0)
    ap.add_argument("--grid", type=int, nargs=3, default=(25, 12, 25), metavar=("NA", "NB", "NG"))
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    grid = build_grid(*args.grid)
    rows = []
    print("  ".join(f"{c:>12s}" for c in COLUMNS))
    for kappa in args.kappa:
        co = compute_coefficients(VmfParams(kappa * args.d, args.d), grid)
        row = {c: getattr(co, c) for c in COLUMNS}
        rows.append(row)
        print("  ".join(f"{row[c]:12.6g}" for c in COLUMNS), flush=True)
    if args.out:
        write_csv(args.out, rows, list(COLUMNS))


if __name__ == "__main__":
    main()
