"""Predicted per-iteration solve time and per-core memory for the table presets.

For each preset and T in {1, 4}, both parallelization schemes are modelled
over powers of two past the slab cap. A regime summary is printed per preset
and the curves are written as CSV, plus an SVG time plot per preset.

    python3 scripts/scaling_curves.py [--presets table1:8lambda,table2:4lambda] [--out-dir curves]
"""
import argparse
from pathlib import Path

from aims import perf_model as pm
from aims.plots import write_line_plot


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--presets", default="table1:8lambda,table1:64lambda,table2:1lambda,"
                                         "table2:16lambda,table3:27.2lambda")
    ap.add_argument("--threads", default="1,4")
    ap.add_argument("--out-dir", default="curves")
    args = ap.parse_args(argv)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    threads = [int(t) for t in args.threads.split(",")]
    for name in args.presets.split(","):
        problem = pm.preset(name)
        curves = [pm.predict_solve_curve(problem, pm.RANGER.with_threads(T), s)
                  for T in threads for s in pm.SCHEMES]
        stem = name.replace(":", "_")
        pm.write_curves_csv(curves, out / f"{stem}.csv")
        write_line_plot(out / f"{stem}.svg",
                        {f"{c.scheme} T={c.machine.T}": (c.P, c.times) for c in curves},
                        xlabel="cores P = M T", ylabel="seconds per iteration", title=name,
                        logx=True, logy=True)
        print(f"{name}: N={problem.N} grid={problem.grid_dims} slab cap={problem.slab_cap}")
        for c in curves:
            P, t = c.minimum()
            print(f"  {c.scheme:<16} T={c.machine.T} {c.regime:<18} min {t:.3e} s at P={P}")
    print(f"curves written to {out}/")


if __name__ == "__main__":
    main()
