"""Stream a simulated trajectory into a hierarchy and print the level sizes as it grows.

    python demos/hierarchy_growth.py --nodes 5000 --threshold 300
"""

import argparse

from phpgo.hierarchy import Hierarchy, replay_order
from phpgo.simulation import SimConfig, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=5000)
    ap.add_argument("--threshold", type=int, default=300)
    ap.add_argument("--kcap", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    graph, _ = simulate(SimConfig(n_nodes=args.nodes, rng_seed=args.seed))
    h = Hierarchy(args.threshold, args.kcap)
    levels = 0
    print("nodes,levels,sizes,reduction_rates")
    for node, pose, edges in replay_order(graph):
        h.add_pose(node, pose, edges)
        if len(h.levels) != levels or (node + 1) % 1000 == 0:
            levels = len(h.levels)
            rates = ";".join(f"{r:.2f}" for r in h.reduction_rates())
            print(f"{node + 1},{levels},{';'.join(map(str, h.sizes()))},{rates}")
    h.check()


if __name__ == "__main__":
    main()
