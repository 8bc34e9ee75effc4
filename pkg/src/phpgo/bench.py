"""Timing harness shared by the ``bench`` command and the scaling tests.

A case is prepared the way an online system would see it: all but the last
``tail`` nodes are streamed in and fully optimized, then the last ``tail``
nodes arrive with poses chained from the current estimate. Each mode is then
timed on its own copy of that state.
"""

from __future__ import annotations

import gc
import time
from dataclasses import dataclass, field

from .hierarchy import DEFAULT_KCAP, DEFAULT_THRESHOLD, Hierarchy, replay_order
from .metrics import Trajectory, relative_errors
from .optimizer import OptConfig, chi2, optimize_inplace
from .partial import Mode, PhpgoConfig, optimize_mode, predicted_pose, refresh_upper
from .simulation import SimConfig, simulate

DEFAULT_SIZES = (1000, 3000, 9000, 27000)
DEFAULT_TAIL = 50


@dataclass
class BenchRow:
    n_nodes: int
    mode: str
    wall_ms: float
    chi2_final: float
    ate: float
    are: float
    levels: int
    reduction_rates: list = field(default_factory=list)

    def csv(self):
        rates = ";".join(f"{r:.3f}" for r in self.reduction_rates)
        return (f"{self.n_nodes},{self.mode},{self.wall_ms:.1f},{self.chi2_final:.6g},"
                f"{self.ate:.6g},{self.are:.6g},{self.levels},{rates}")


BENCH_HEADER = "n_nodes,mode,wall_ms,chi2_final,ate,are,levels,reduction_rates"


def warm_start(graph, tail=DEFAULT_TAIL, threshold=DEFAULT_THRESHOLD, kcap=DEFAULT_KCAP,
               opt: OptConfig | None = None):
    """Hierarchy over ``graph`` whose newest ``tail`` nodes are not optimized yet."""
    items = list(replay_order(graph))
    if not items:
        raise ValueError("empty graph")
    tail = min(max(tail, 0), len(items) - 1)
    h = Hierarchy(threshold, kcap)
    head = items[:len(items) - tail]
    for node, pose, edges in head:
        h.add_pose(node, pose, edges)
    optimize_inplace(h.graph, opt)
    refresh_upper(h)
    for node, pose, edges in items[len(items) - tail:]:
        h.add_pose(node, predicted_pose(h, node, edges, pose), edges)
    return h, items[-1][0]


def time_mode(h, last, cfg: PhpgoConfig, repeats=1):
    """Best wall time of ``repeats`` ``optimize_mode`` calls; returns ``(seconds, state)``.

    As with :mod:`timeit`, the minimum is reported since background load only
    ever adds time, and the cyclic garbage collector is paused during the call.
    """
    times = []
    out = None
    enabled = gc.isenabled()
    for _ in range(max(1, repeats)):
        hc = h.copy()
        gc.collect()
        gc.disable()
        try:
            t0 = time.perf_counter()
            optimize_mode(hc, last, cfg)
            times.append(time.perf_counter() - t0)
        finally:
            if enabled:
                gc.enable()
        out = hc
    return min(times), out


def run_case(n_nodes, modes=tuple(Mode), seed=0, P=None, threshold=DEFAULT_THRESHOLD,
             kcap=DEFAULT_KCAP, opt: OptConfig | None = None, tail=DEFAULT_TAIL, repeats=1):
    graph, gt = simulate(SimConfig(n_nodes=n_nodes, rng_seed=seed))
    h, last = warm_start(graph, tail, threshold, kcap, opt)
    rows = []
    for mode in modes:
        extra = {} if P is None else {"P": P}
        cfg = PhpgoConfig(mode=mode, opt=opt or OptConfig(), **extra)
        secs, hc = time_mode(h, last, cfg, repeats)
        hc.flush()
        m = relative_errors(Trajectory.from_graph(hc.graph), gt)
        rows.append(BenchRow(n_nodes, Mode(mode).value, 1e3 * secs, chi2(hc.graph), m.ate, m.are,
                             len(hc.levels), hc.reduction_rates()))
    return rows
