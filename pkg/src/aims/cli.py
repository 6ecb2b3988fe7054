"""Command-line entry point: ``python3 -m aims <command>``.

Exit codes: 0 success, 1 a check failed, 2 bad usage or input.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import perf_model as pm
from .plots import write_line_plot
from .scenario import PRESETS, Scenario, ScenarioError, run_scenario
from .slab_fft import OccupancyMask, distributed_fft3, plan_slabs, transform_flops
from .validation import SUITES, run_suite

log = logging.getLogger("aims")

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2
FFT_COLUMNS = ["dims", "ranks", "strategy", "occupancy", "msgs_sent", "bytes_sent",
               "fft_flops", "rel_error", "byte_ratio"]


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


# -- simulate ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    if args.scenario:
        sc = Scenario.from_json(args.scenario)
    elif args.preset:
        if args.preset not in PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
        sc = PRESETS[args.preset]
    else:
        raise UsageError("give --scenario or --preset")
    out_dir = Path(args.out or f"runs/{sc.name or 'scenario'}")
    result = run_scenario(sc, out_dir)
    r = result.report
    print(f"N={r['N']} grid={r['grid_dims']} near={r['near_entries']} "
          f"iterations={r['iterations']} residual={r['residual']:.2e}")
    print(f"err_vv={100 * r['err_vv']:.3f}% budget={100 * r['budget']:.2f}% "
          f"{'PASS' if r['passed'] else 'FAIL'}")
    print(f"report written to {out_dir / 'report.json'}")
    if args.check and not result.passed:
        return EXIT_CHECK
    return EXIT_OK


# -- fft-bench -----------------------------------------------------------------

def occupied_array(dims, occupancy: float, rng) -> np.ndarray:
    """Random complex data in the first ``occupancy`` fraction of x, zeros elsewhere."""
    a = np.zeros(dims, dtype=complex)
    nx = int(round(occupancy * dims[0]))
    a[:nx] = rng.normal(size=(nx,) + tuple(dims[1:])) + 1j * rng.normal(size=(nx,) + tuple(dims[1:]))
    return a


def fft_bench(dims, ranks_list, occupancy: float, strategies=("collective", "p2p"),
              seed: int = 0) -> tuple[list[dict], bool]:
    """Rows of per-strategy traffic and whether every output matched the serial FFT."""
    if not 0.0 < occupancy <= 1.0:
        raise UsageError("occupancy must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    a = occupied_array(dims, occupancy, rng)
    ref = np.fft.fftn(a)
    scale = max(np.linalg.norm(ref), 1e-300)
    rows, ok = [], True
    for P in ranks_list:
        if not 1 <= P <= min(dims[0], dims[1]):
            raise UsageError(f"ranks {P} exceeds the slab count {min(dims[0], dims[1])}")
        plan = plan_slabs(dims, P)
        mask = OccupancyMask.from_array(plan, a)
        coll_bytes = None
        for strategy in strategies:
            run = distributed_fft3(a, P, strategy, mask=mask if strategy == "p2p" else None,
                                   seed=seed)
            err = float(np.linalg.norm(run.output - ref) / scale)
            ok &= err <= 1e-12
            if strategy == "collective":
                coll_bytes = run.bytes_sent
            occ = mask.columns if strategy == "p2p" else None
            rows.append({
                "dims": "x".join(map(str, dims)), "ranks": P, "strategy": strategy,
                "occupancy": occupancy, "msgs_sent": run.msgs_sent, "bytes_sent": run.bytes_sent,
                "fft_flops": transform_flops(dims, P, occ), "rel_error": err,
                "byte_ratio": (run.bytes_sent / coll_bytes) if coll_bytes else
                              (1.0 if run.bytes_sent == 0 else float("nan")),
            })
    return rows, ok


def cmd_fft_bench(args) -> int:
    if len(args.dims) != 3:
        raise UsageError("--dims needs three integers X,Y,Z")
    strategies = tuple(args.strategies.split(","))
    if not set(strategies) <= {"collective", "p2p"}:
        raise UsageError("strategies are 'collective' and 'p2p'")
    rows, ok = fft_bench(tuple(args.dims), args.ranks, args.occupancy, strategies, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=FFT_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"P={r['ranks']:>3} {r['strategy']:<10} msgs={r['msgs_sent']:>6} "
              f"bytes={r['bytes_sent']:>10} ratio={r['byte_ratio']:.3f} err={r['rel_error']:.1e}")
    print(f"{'outputs match' if ok else 'OUTPUT MISMATCH'}; table written to {out}")
    return EXIT_OK if ok else EXIT_CHECK


# -- perf -------------------------------------------------------------------------

def load_machine(spec: str | None) -> pm.MachineParams:
    if spec is None or spec == "ranger":
        return pm.RANGER
    path = Path(spec)
    if not path.exists():
        raise UsageError(f"machine file {spec} not found")
    try:
        return pm.MachineParams.from_json(path)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad machine file {spec}: {exc}") from None


def problem_from_report(path) -> pm.ProblemDescriptor:
    data = json.loads(Path(path).read_text())
    sc = data.get("scenario", {}).get("scatterer", "plate")
    return pm.ProblemDescriptor(data["N"], tuple(data["grid_dims"]), data["near_entries"],
                                "sphere" if sc == "sphere" else ("plate" if sc == "plate" else "complex"),
                                label=str(path))


def perf_curves(problem, machine, P_values=None, threads=(1, 4)) -> list:
    curves = []
    for T in threads:
        m = machine.with_threads(T)
        Ps = None if P_values is None else [p for p in P_values if p % T == 0]
        if Ps is not None and not Ps:
            continue
        for scheme in pm.SCHEMES:
            curves.append(pm.predict_solve_curve(problem, m, scheme, Ps))
    return curves


def cmd_perf(args) -> int:
    if bool(args.preset) == bool(args.report):
        raise UsageError("give exactly one of --preset or --report")
    try:
        problem = pm.preset(args.preset) if args.preset else problem_from_report(args.report)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    machine = load_machine(args.machine)
    curves = perf_curves(problem, machine, args.P)
    if not curves:
        raise UsageError("no core count is a multiple of any thread count")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    pm.write_curves_csv(curves, out)
    for c in curves:
        P, t = c.minimum()
        print(f"{c.scheme:<16} T={c.machine.T} regime={c.regime:<18} min {t:.3e} s/iter at P={P}")
    if args.svg:
        series = {f"{c.scheme} T={c.machine.T}": (c.P, c.times) for c in curves if len(c.points) > 1}
        if series:
            write_line_plot(args.svg, series, xlabel="cores P = M T", ylabel="seconds per iteration",
                            title=problem.label, logx=True, logy=True)
    print(f"curves written to {out}")
    return EXIT_OK


# -- validate ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    results = run_suite(args.suite)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_CHECK if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aims", description="FFT-accelerated MOM scattering toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="solve one scattering scenario and score its RCS")
    s.add_argument("--scenario", help="scenario JSON file")
    s.add_argument("--preset", help=f"built-in scenario: {', '.join(sorted(PRESETS))}")
    s.add_argument("--out", help="output directory (default runs/<name>)")
    s.add_argument("--check", action="store_true", help="exit 1 when the error budget is missed")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fft-bench", help="compare slab FFT strategies on simulated ranks")
    f.add_argument("--dims", type=_int_list, required=True, help="X,Y,Z")
    f.add_argument("--ranks", type=_int_list, default=[1, 2, 4], help="comma-separated rank counts")
    f.add_argument("--occupancy", type=float, default=1.0, help="occupied fraction of x columns")
    f.add_argument("--strategies", default="collective,p2p")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", default="fft_bench.csv")
    f.set_defaults(func=cmd_fft_bench)

    p = sub.add_parser("perf", help="predicted per-iteration time curves")
    p.add_argument("--preset", help="table preset such as table2:1lambda")
    p.add_argument("--report", help="report.json written by simulate")
    p.add_argument("--machine", help="machine JSON (default: built-in Ranger constants)")
    p.add_argument("--P", type=_int_list, help="core counts (default: powers of two past the slab cap)")
    p.add_argument("--out", default="curves.csv")
    p.add_argument("--svg", help="also write an SVG plot")
    p.set_defaults(func=cmd_perf)

    v = sub.add_parser("validate", help="run an acceptance suite")
    v.add_argument("suite", choices=sorted(SUITES))
    v.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ScenarioError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
