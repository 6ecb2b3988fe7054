"""Transpose traffic of the two slab FFT strategies as column occupancy varies.

Every run is checked against the serial FFT; the byte ratio of the
point-to-point strategy to the collective one is printed per occupancy.

    python3 scripts/fft_occupancy_sweep.py [--dims 32,32,8] [--ranks 2,4,8] [--out fft_sweep.csv]
"""
import argparse
import csv

from aims.cli import FFT_COLUMNS, fft_bench


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dims", default="32,32,8")
    ap.add_argument("--ranks", default="2,4,8")
    ap.add_argument("--occupancies", default="0.125,0.25,0.5,0.75,1.0")
    ap.add_argument("--out", default="fft_sweep.csv")
    args = ap.parse_args(argv)
    dims = tuple(int(n) for n in args.dims.split(","))
    ranks = [int(p) for p in args.ranks.split(",")]
    rows = []
    for occ in (float(o) for o in args.occupancies.split(",")):
        part, ok = fft_bench(dims, ranks, occ)
        if not ok:
            raise SystemExit(f"distributed FFT mismatch at occupancy {occ}")
        rows += part
        ratios = ", ".join(f"P={r['ranks']}: {r['byte_ratio']:.3f}"
                           for r in part if r["strategy"] == "p2p")
        print(f"occupancy {occ:.3f}: p2p/collective bytes {ratios}")
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=FFT_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    print(f"table written to {args.out}")


if __name__ == "__main__":
    main()
