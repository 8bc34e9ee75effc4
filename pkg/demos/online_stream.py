"""Run partial optimization online over a noisy trajectory and compare with full batch.

    python demos/online_stream.py --nodes 2700 --every 50
"""

import argparse
import time

from phpgo.metrics import Trajectory, relative_errors
from phpgo.optimizer import optimize
from phpgo.partial import PhpgoConfig, run_online
from phpgo.simulation import SimConfig, simulate


def report(name, graph, gt, seconds):
    m = relative_errors(Trajectory.from_graph(graph), gt)
    print(f"{name:<10} ate={m.ate:.5f}  are={m.are:.6f}  time={seconds:.2f} s")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=2700)
    ap.add_argument("--every", type=int, default=50)
    ap.add_argument("--p", type=int, default=PhpgoConfig.P)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    graph, gt = simulate(SimConfig(n_nodes=args.nodes, rng_seed=args.seed))
    report("odometry", graph, gt, 0.0)

    t0 = time.perf_counter()
    full, _ = optimize(graph)
    report("full", full, gt, time.perf_counter() - t0)

    t0 = time.perf_counter()
    res = run_online(graph, PhpgoConfig(P=args.p), every=args.every)
    res.hierarchy.flush()
    report("online", res.hierarchy.graph, gt, time.perf_counter() - t0)
    print(f"{res.calls} partial calls, hierarchy sizes {res.hierarchy.sizes()}")


if __name__ == "__main__":
    main()
