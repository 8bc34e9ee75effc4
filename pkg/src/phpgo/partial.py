"""Partial hierarchical optimization and the two baseline schedules.

``Partial`` optimizes the whole top level, then walks down the hierarchy and,
on every lower level, re-optimizes only the ``P`` nodes nearest (in hops) to
the newest node while the ring of nodes around them stays fixed. ``TopOnly``
stops after the top level; ``Full`` is ordinary optimization of level 0.

Moves of upper-level nodes are handed down lazily (see
:class:`~phpgo.hierarchy.Hierarchy`); call ``h.flush()`` before reading
level-0 poses that were not part of the last selection.
"""

from __future__ import annotations

import enum
import time
from collections import deque
from dataclasses import dataclass, field, replace

from . import manifold as mf
from .errors import MissingSeed
from .hierarchy import DEFAULT_KCAP, DEFAULT_THRESHOLD, Hierarchy, replay_order
from .optimizer import OptConfig, OptReport, optimize_inplace


class Mode(str, enum.Enum):
    FULL = "full"
    TOP = "top"
    PARTIAL = "partial"


@dataclass
class PhpgoConfig:
    P: int = 200
    mode: Mode = Mode.PARTIAL
    opt: OptConfig = field(default_factory=OptConfig)

    def __post_init__(self):
        if self.P < 2:
            raise ValueError("P must be >= 2")
        self.mode = Mode(self.mode)


@dataclass
class Selection:
    interior: list  # BFS order, seed first
    border: set

    def __post_init__(self):
        if self.border.intersection(self.interior):
            raise ValueError("interior and border overlap")


def bfs_select(graph, seed, P) -> Selection:
    """The ``P`` nodes closest to ``seed`` in hops plus the nodes bordering them.

    Neighbours are expanded in ascending id order.
    """
    if seed not in graph.nodes:
        raise MissingSeed(seed)
    if P < 2:
        raise ValueError("P must be >= 2")
    order = [seed]
    seen = {seed}
    queue = deque([seed])
    while queue and len(order) < P:
        n = queue.popleft()
        for m in sorted(set(graph.neighbors(n))):
            if m not in seen:
                seen.add(m)
                order.append(m)
                queue.append(m)
                if len(order) == P:
                    break
    inside = set(order)
    border = {m for n in order for m in graph.neighbors(n) if m not in inside}
    return Selection(order, border)


def propagate_down(h: Hierarchy, upper, nodes=None):
    """Move every group at level ``upper - 1`` rigidly with its upper node.

    ``delta = new(u) * inverse(old(rep))`` is applied on the left of each
    member pose; the representative lands exactly on ``u``. ``nodes``
    restricts the update to some upper nodes.
    """
    if not 1 <= upper <= h.top:
        raise ValueError(f"upper must lie in [1, {h.top}]")
    targets = h.levels[upper].graph.nodes if nodes is None else nodes
    for u in sorted(targets):
        h.push(upper, u)
    return h


def add_pose(h: Hierarchy, node, pose, edges=()):
    return h.add_pose(node, pose, edges)


def _solve_level(h, l, selection, seed, opt, mode):
    graph = h.levels[l].graph
    h.materialize(l, list(selection.interior) + sorted(selection.border))
    fixed = set(selection.border) or {seed}
    free = [n for n in selection.interior if n not in fixed]
    report = optimize_inplace(graph, replace(opt, fixed_nodes=frozenset(fixed)), free=free)
    report.mode, report.level = mode, l
    if l >= 1:
        h.dirty[l].update(free)
    h.sync_up(l, free)
    return report


def _optimize_top(h, opt, mode):
    l = h.top
    report = optimize_inplace(h.levels[l].graph, opt)
    report.mode, report.level = mode, l
    if l >= 1:
        h.dirty[l].update(h.levels[l].graph.nodes)
    return report


def optimize_partial(h: Hierarchy, last_node, cfg: PhpgoConfig | None = None):
    """Top level in full, then a ``P``-node window around ``last_node`` on each lower level."""
    cfg = cfg or PhpgoConfig()
    if last_node not in h.graph.nodes:
        raise MissingSeed(last_node)
    reports = []
    below = h.top
    if h.top > 0:
        reports.append(_optimize_top(h, cfg.opt, Mode.PARTIAL.value))
        below = h.top - 1
    for l in range(below, -1, -1):
        seed = h.ancestor(last_node, l)
        sel = bfs_select(h.levels[l].graph, seed, cfg.P)
        reports.append(_solve_level(h, l, sel, seed, cfg.opt, Mode.PARTIAL.value))
    return h, reports


def refresh_upper(h: Hierarchy):
    """Set every upper-level pose to its representative's pose (bottom-up)."""
    for l in range(h.top):
        lower = h.levels[l]
        upper = h.levels[l + 1].graph.nodes
        for grp, rep in lower.representative.items():
            upper[grp] = lower.graph.nodes[rep]
        h.dirty[l + 1].clear()


def optimize_mode(h: Hierarchy, last_node, cfg: PhpgoConfig | None = None):
    """Dispatch on ``cfg.mode``; returns ``(h, reports)``. ``h`` is updated in place."""
    cfg = cfg or PhpgoConfig()
    mode = cfg.mode
    if mode is Mode.TOP and h.top == 0:
        mode = Mode.FULL
    if mode is Mode.PARTIAL:
        return optimize_partial(h, last_node, cfg)
    if mode is Mode.TOP:
        return h, [_optimize_top(h, cfg.opt, Mode.TOP.value)]
    h.flush()
    report = optimize_inplace(h.graph, cfg.opt)
    report.mode = Mode.FULL.value
    refresh_upper(h)
    return h, [report]


# --------------------------------------------------------------------------
# online use
# --------------------------------------------------------------------------

def predicted_pose(h: Hierarchy, node, edges, fallback):
    """Pose of a new node chained from its most recent already-known neighbour."""
    best = None
    for e in edges:
        other = e.other(node)
        if other in h.graph.nodes and (best is None or other > best.other(node)):
            best = e
    if best is None:
        return fallback
    other = best.other(node)
    h.materialize(0, [other])
    z = best.measurement if best.source == other else mf.inverse(best.measurement)
    return mf.compose(h.graph.nodes[other], z)


@dataclass
class StreamResult:
    hierarchy: Hierarchy
    reports: list
    opt_time: float
    calls: int


def run_online(graph, cfg: PhpgoConfig | None = None, every=25, threshold=DEFAULT_THRESHOLD,
               kcap=DEFAULT_KCAP, predict=True, final=True) -> StreamResult:
    """Replay ``graph`` node by node, optimizing after every ``every`` insertions.

    With ``predict`` each new pose is chained from the current estimate of its
    latest neighbour instead of being read from ``graph``.
    """
    cfg = cfg or PhpgoConfig()
    if every < 1:
        raise ValueError("every must be >= 1")
    h = Hierarchy(threshold, kcap)
    reports = []
    spent = 0.0
    calls = 0
    last = None
    count = 0
    for node, pose, edges in replay_order(graph):
        if predict:
            pose = predicted_pose(h, node, edges, pose)
        h.add_pose(node, pose, edges)
        last = node
        count += 1
        if count % every == 0:
            t0 = time.perf_counter()
            _, rep = optimize_mode(h, last, cfg)
            spent += time.perf_counter() - t0
            reports.extend(rep)
            calls += 1
    if final and last is not None and count % every:
        t0 = time.perf_counter()
        _, rep = optimize_mode(h, last, cfg)
        spent += time.perf_counter() - t0
        reports.extend(rep)
        calls += 1
    return StreamResult(h, reports, spent, calls)


__all__ = [
    "Mode", "PhpgoConfig", "Selection", "bfs_select", "propagate_down", "add_pose",
    "optimize_partial", "optimize_mode", "refresh_upper", "predicted_pose", "run_online",
    "StreamResult", "OptReport",
]
