"""Time Full, Partial and Top-only optimization on growing simulated graphs.

Each size is prepared as an online system would see it: everything but the
newest nodes is already optimized. Prints one CSV row per size and mode.

    python demos/mode_timing.py --sizes 1000 3000 9000
"""

import argparse

from phpgo.bench import BENCH_HEADER, run_case


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1000, 3000, 9000])
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(BENCH_HEADER)
    by_mode = {}
    for n in args.sizes:
        for row in run_case(n, seed=args.seed, repeats=args.repeats):
            print(row.csv(), flush=True)
            by_mode.setdefault(row.mode, []).append(row.wall_ms)
    if "full" in by_mode and "partial" in by_mode:
        speedups = [f / p for f, p in zip(by_mode["full"], by_mode["partial"])]
        print("# full/partial:", " ".join(f"{s:.1f}x" for s in speedups))


if __name__ == "__main__":
    main()
