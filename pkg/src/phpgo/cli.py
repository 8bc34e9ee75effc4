"""Command-line entry point: ``phpgo {optimize,bench,metrics}``.

Results go to standard output as CSV; diagnostics go to standard error.
Exit codes: 0 success, 1 unreadable or malformed input, 2 optimization failure.
"""

from __future__ import annotations

import argparse
import sys
import time

from .bench import BENCH_HEADER, DEFAULT_SIZES, DEFAULT_TAIL, run_case
from .errors import AngleAtPi, NoFixedGauge, NotPositiveDefinite, PhpgoError
from .hierarchy import DEFAULT_KCAP, DEFAULT_THRESHOLD, Hierarchy
from .metrics import read_tum, relative_errors
from .optimizer import OptConfig, chi2
from .partial import Mode, PhpgoConfig, optimize_mode
from .pose_graph import read_g2o, save_g2o

OPTIMIZE_HEADER = "mode,nodes,edges,levels,chi2_initial,chi2_final,wall_ms"
METRICS_HEADER = "ate,are,n_pairs"

_OPT_ERRORS = (NotPositiveDefinite, NoFixedGauge, AngleAtPi)


def _positive(kind, low):
    def parse(text):
        value = kind(text)
        if value < low:
            raise argparse.ArgumentTypeError(f"must be >= {low}")
        return value
    return parse


def _common(p):
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.PARTIAL.value)
    p.add_argument("--p", type=_positive(int, 2), default=None, help="window size per level")
    p.add_argument("--t", type=_positive(int, 1), default=DEFAULT_THRESHOLD, help="level threshold")
    p.add_argument("--kcap", type=_positive(int, 1), default=DEFAULT_KCAP, help="max group size")
    p.add_argument("--max-iters", type=_positive(int, 1), default=OptConfig.max_iterations)
    p.add_argument("--seed", type=int, default=0)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # bad command lines share the exit code of bad input files
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="phpgo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("optimize", help="optimize a g2o file")
    p.add_argument("input")
    p.add_argument("-o", "--output", default=None, help="write the optimized graph here")
    _common(p)

    p = sub.add_parser("bench", help="time all modes on simulated graphs")
    _common(p)
    p.add_argument("--sizes", type=_positive(int, 2), nargs="+", default=list(DEFAULT_SIZES))
    p.add_argument("--tail", type=_positive(int, 0), default=DEFAULT_TAIL,
                   help="nodes added after the last full optimization")
    p.add_argument("--modes", choices=[m.value for m in Mode], nargs="+",
                   default=[m.value for m in Mode])
    p.add_argument("--repeats", type=_positive(int, 1), default=1,
                   help="report the best of this many timed calls")

    p = sub.add_parser("metrics", help="relative errors of a TUM trajectory")
    p.add_argument("estimate")
    p.add_argument("--gt", required=True)
    return parser


def _phpgo_config(args):
    extra = {} if args.p is None else {"P": args.p}
    return PhpgoConfig(mode=args.mode, opt=OptConfig(max_iterations=args.max_iters), **extra)


def cmd_optimize(args, out=None):
    out = out or sys.stdout
    try:
        graph = read_g2o(args.input)
        h = Hierarchy.from_graph(graph, args.t, args.kcap)
    except (OSError, PhpgoError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if not graph.nodes:
        print("error: graph has no nodes", file=sys.stderr)
        return 1
    cfg = _phpgo_config(args)
    chi0 = chi2(h.graph)
    t0 = time.perf_counter()
    try:
        optimize_mode(h, max(graph.nodes), cfg)
    except _OPT_ERRORS as exc:
        print(f"optimization failed: {exc}", file=sys.stderr)
        return 2
    wall = time.perf_counter() - t0
    h.flush()
    if args.output:
        try:
            save_g2o(h.graph, args.output)
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    print(OPTIMIZE_HEADER, file=out)
    print(f"{cfg.mode.value},{len(h.graph.nodes)},{len(h.graph.edges)},{len(h.levels)},"
          f"{chi0:.6g},{chi2(h.graph):.6g},{1e3 * wall:.1f}", file=out)
    return 0


def cmd_bench(args, out=None):
    out = out or sys.stdout
    print(BENCH_HEADER, file=out)
    opt = OptConfig(max_iterations=args.max_iters)
    for n in args.sizes:
        try:
            rows = run_case(n, args.modes, args.seed, args.p, args.t, args.kcap, opt, args.tail,
                            args.repeats)
        except _OPT_ERRORS as exc:
            print(f"optimization failed at n={n}: {exc}", file=sys.stderr)
            return 2
        for row in rows:
            print(row.csv(), file=out, flush=True)
    return 0


def cmd_metrics(args, out=None):
    out = out or sys.stdout
    try:
        est = read_tum(args.estimate)
        gt = read_tum(args.gt)
        m = relative_errors(est, gt)
    except (OSError, PhpgoError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(METRICS_HEADER, file=out)
    print(f"{m.ate:.6g},{m.are:.6g},{m.n_pairs}", file=out)
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    handler = {"optimize": cmd_optimize, "bench": cmd_bench, "metrics": cmd_metrics}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
