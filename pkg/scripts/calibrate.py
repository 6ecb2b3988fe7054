"""Measure the per-unknown constants used by the performance-model presets.

Builds AIM operators for a plate and a sphere at desk scale and prints the
near-zone entries per unknown, grid cells per sqrt(N) along each axis, and the cost
of one AIM near-zone entry relative to one dense MOM entry.

    python3 scripts/calibrate.py [--plate 8] [--sphere 1] [--timed-plate 2]
"""
import argparse
import json

from aims.aim import build_aim_operator
from aims.geometry import build_rwg, make_sphere_mesh
from aims.scenario import plate_for_mean_edge
from aims.mom import EFIE, Formulation

WAVELENGTH = 1.0


def structure(basis, form=EFIE):
    op = build_aim_operator(basis, WAVELENGTH, form=form, structure_only=True)
    return {
        "N": op.n,
        "grid_dims": list(op.grid.dims),
        "near_entries": op.near_count,
        "near_per_unknown": op.near_count / op.n,
        "doubled_per_unknown": op.grid.n_doubled / op.n,
        "cells_per_root_n": [(n - op.grid.order - 1) / op.n ** 0.5 for n in op.grid.dims],
        "flops_per_matvec": op.flops_per_matvec(),
    }


def fill_ratio(basis, form=EFIE):
    """AIM fill seconds per near entry over dense MOM seconds per entry."""
    op = build_aim_operator(basis, WAVELENGTH, form=form)
    t = op.timings
    mom_per_entry = t["near_mom"] / op.near_count
    aim_per_entry = sum(t.values()) / op.near_count
    return {"N": op.n, "timings": t, "fill_ratio": aim_per_entry / mom_per_entry}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--plate", type=float, default=8.0, help="plate side in wavelengths")
    ap.add_argument("--sphere", type=float, default=1.0, help="sphere radius in wavelengths")
    ap.add_argument("--timed-plate", type=float, default=2.0,
                    help="plate side used for the fill-cost ratio")
    args = ap.parse_args(argv)
    edge = WAVELENGTH / 9
    out = {
        "plate": structure(build_rwg(plate_for_mean_edge(args.plate, edge))),
        "sphere": structure(build_rwg(make_sphere_mesh(args.sphere, edge)), Formulation("cfie", 0.6)),
        "fill": fill_ratio(build_rwg(plate_for_mean_edge(args.timed_plate, edge))),
    }
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
