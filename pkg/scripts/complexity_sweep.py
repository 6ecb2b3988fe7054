"""Operator sizes and matvec cost across plate sizes, with fitted growth exponents.

For each plate side the AIM operator structure is built (no matrix entries),
and the unknown count, grid, near-zone entries, nominal matvec flops, kernel
bytes and dense MOM bytes are recorded. Exponents of the log-log fits are
printed, and an SVG plot of the three quantities against N is written.

    python3 scripts/complexity_sweep.py [--sides 1,2,4,8] [--out complexity.csv] [--svg complexity.svg]
"""
import argparse
import csv

import numpy as np

from aims.aim import build_aim_operator
from aims.geometry import build_rwg
from aims.perf_model import mom_memory
from aims.plots import write_line_plot
from aims.scenario import WAVELENGTH, plate_for_mean_edge
from aims.validation import fitted_exponent

COLUMNS = ["side_wavelengths", "N", "grid_dims", "near_entries", "near_per_unknown",
           "flops_per_matvec", "kernel_bytes", "mom_bytes"]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sides", default="1,2,4,8", help="plate sides in wavelengths")
    ap.add_argument("--edge", type=float, default=1 / 9, help="mean edge in wavelengths")
    ap.add_argument("--out", default="complexity.csv")
    ap.add_argument("--svg", default=None)
    args = ap.parse_args(argv)
    rows = []
    for side in (float(s) for s in args.sides.split(",")):
        basis = build_rwg(plate_for_mean_edge(side * WAVELENGTH, args.edge * WAVELENGTH))
        op = build_aim_operator(basis, WAVELENGTH, structure_only=True)
        rows.append({
            "side_wavelengths": side, "N": op.n, "grid_dims": "x".join(map(str, op.grid.dims)),
            "near_entries": op.near_count, "near_per_unknown": round(op.near_count / op.n, 3),
            "flops_per_matvec": op.flops_per_matvec(), "kernel_bytes": op.memory_bytes()["kernel"],
            "mom_bytes": float(mom_memory(op.n)),
        })
        print(f"side {side:g}: N={op.n} grid={rows[-1]['grid_dims']} near={op.near_count} "
              f"flops={op.flops_per_matvec():.3e}")
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COLUMNS)
        w.writeheader()
        w.writerows(rows)
    N = np.array([r["N"] for r in rows], float)
    series = {name: (N, np.array([r[col] for r in rows], float))
              for name, col in (("matvec flops", "flops_per_matvec"),
                                ("near entries", "near_entries"),
                                ("dense MOM bytes", "mom_bytes"))}
    if len(rows) > 1:
        for name, (x, y) in series.items():
            print(f"fitted exponent of {name}: {fitted_exponent(x, y):.4f}")
    if args.svg:
        write_line_plot(args.svg, series, xlabel="unknowns N", ylabel="count",
                        title="plate complexity", logx=True, logy=True)
    print(f"table written to {args.out}")


if __name__ == "__main__":
    main()
