"""Modularity-based incremental grouping of pose-graph nodes and level coarsening.

Each level of a :class:`Hierarchy` is a pose graph together with a partition
of its nodes into small groups. Every group becomes one node of the next
level; the group id doubles as that node's id (it is the id of the node that
founded the group), so ``assignment`` at level ``l`` is also the parent map
into level ``l + 1``.

Inter-group edges are condensed from the underlying measurements. Inside a
group, member offsets are chained along the measurements through which each
member joined, so an upper-level edge carries the measured (not the currently
estimated) transform between two representatives.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from . import manifold as mf
from .errors import EmptyGraph, MissingEndpoint, NotSingleton, SelfLoop, UnassignedNode
from .manifold import Pose
from .pose_graph import Edge, PoseGraph, check_information

WEIGHT_EPS = 1e-12
DEFAULT_KCAP = 3
DEFAULT_THRESHOLD = 300


def edge_weight(edge: Edge) -> float:
    """Inverse Mahalanobis length of the measurement, ``1 / max(z^T Omega z, eps)``."""
    z = mf.log(edge.measurement, strict=False)
    return 1.0 / max(float(z @ edge.information @ z), WEIGHT_EPS)


class WeightedView:
    """Edge weights, weighted degrees and total weight of a graph, kept in sync by hand."""

    def __init__(self, graph: PoseGraph | None = None):
        self.weights: list[float] = []
        self.degree: dict[int, float] = {}
        self.m = 0.0
        if graph is not None:
            for n in graph.nodes:
                self.add_node(n)
            for e in graph.edges:
                self.add_edge(e)

    def add_node(self, node):
        self.degree.setdefault(node, 0.0)

    def add_edge(self, edge):
        w = edge_weight(edge)
        self.weights.append(w)
        self.degree[edge.source] += w
        self.degree[edge.target] += w
        self.m += w
        return w

    def replace_edge(self, idx, edge):
        old = self.weights[idx]
        w = edge_weight(edge)
        self.weights[idx] = w
        self.degree[edge.source] += w - old
        self.degree[edge.target] += w - old
        self.m += w - old
        return w


class Partition:
    """Node -> group assignment and its inverse, with a group-size cap."""

    def __init__(self, kcap=DEFAULT_KCAP):
        if kcap < 1:
            raise ValueError("kcap must be >= 1")
        self.kcap = kcap
        self.assignment: dict[int, int] = {}
        self.members: dict[int, list[int]] = {}

    def __contains__(self, node):
        return node in self.assignment

    def size(self, group):
        return len(self.members[group])

    def group_of(self, node):
        try:
            return self.assignment[node]
        except KeyError:
            raise UnassignedNode(node) from None

    def new_group(self, node):
        self.assignment[node] = node
        self.members[node] = [node]

    def move(self, node, group):
        old = self.assignment[node]
        self.members[old].remove(node)
        if not self.members[old]:
            del self.members[old]
        self.assignment[node] = group
        self.members[group].append(node)

    def copy(self):
        p = Partition(self.kcap)
        p.assignment = dict(self.assignment)
        p.members = {g: list(v) for g, v in self.members.items()}
        return p

    def check(self):
        assert set(self.assignment) == {n for v in self.members.values() for n in v}
        for g, v in self.members.items():
            assert 1 <= len(v) <= self.kcap, f"group {g} has {len(v)} members"
            for n in v:
                assert self.assignment[n] == g
        return True


class HierarchyLevel:
    """One level: its graph, the grouping of its nodes and the condensation bookkeeping."""

    def __init__(self, graph: PoseGraph, kcap=DEFAULT_KCAP):
        self.graph = graph
        self.view = WeightedView(graph)
        self.partition = Partition(kcap)
        self.representative: dict[int, int] = {}
        # offset[n]: measured pose of n relative to its group's founder
        self.offset: dict[int, Pose] = {}
        # join[n]: (neighbour, edge index) through which n entered its group
        self.join: dict[int, tuple[int, int]] = {}
        # links[(ga, gb)] with ga < gb: index of the condensed edge one level up
        self.links: dict[tuple[int, int], int] = {}

    def __len__(self):
        return len(self.graph.nodes)

    def parent_of(self, node):
        return self.partition.group_of(node)

    def copy(self):
        lv = HierarchyLevel.__new__(HierarchyLevel)
        lv.graph = self.graph.copy()
        lv.view = WeightedView()
        lv.view.weights = list(self.view.weights)
        lv.view.degree = dict(self.view.degree)
        lv.view.m = self.view.m
        lv.partition = self.partition.copy()
        lv.representative = dict(self.representative)
        lv.offset = dict(self.offset)
        lv.join = dict(self.join)
        lv.links = dict(self.links)
        return lv


# --------------------------------------------------------------------------
# modularity
# --------------------------------------------------------------------------

def modularity(view: WeightedView, partition: Partition, graph: PoseGraph) -> float:
    """Q summed over ordered node pairs that share a group."""
    m = view.m
    if m <= 0:
        raise EmptyGraph("total edge weight is zero")
    inside = 0.0
    for idx, e in enumerate(graph.edges):
        if partition.assignment[e.source] == partition.assignment[e.target]:
            inside += 2.0 * view.weights[idx]
    null = 0.0
    for members in partition.members.values():
        s = sum(view.degree[n] for n in members)
        null += s * s
    return (inside - null / (2.0 * m)) / (2.0 * m)


def _weight_into(level, node, group):
    """Total weight of edges joining ``node`` to members of ``group``."""
    members = level.partition.members[group]
    g = level.graph
    return sum(level.view.weights[k] for k in g.adjacency[node]
               if g.edges[k].other(node) in members)


def modularity_gain(level: HierarchyLevel, node, target_group) -> float:
    """Gain of moving a singleton ``node`` into ``target_group``.

    ``sigma_in / 2m - sigma_group * k_node / 2m^2`` where ``sigma_in`` is the
    weight between ``node`` and the group summed over ordered pairs (each edge
    counts twice, as in ``modularity``) and ``sigma_group`` is the summed
    weighted degree of the group's members. With that counting the value is
    exactly the change in ``modularity`` caused by the move.
    """
    part = level.partition
    if part.size(part.group_of(node)) != 1:
        raise NotSingleton(node)
    if part.assignment[node] == target_group:
        raise ValueError("node already belongs to the target group")
    m = level.view.m
    if m <= 0:
        raise EmptyGraph("total edge weight is zero")
    sigma_in = 2.0 * _weight_into(level, node, target_group)
    sigma_group = sum(level.view.degree[n] for n in part.members[target_group])
    return sigma_in / (2.0 * m) - sigma_group * level.view.degree[node] / (2.0 * m * m)


def build_hierarchy_increment(level: HierarchyLevel, new_nodes):
    """Assign ``new_nodes`` (in order) to groups; earlier assignments are left alone.

    Every new node starts in its own group. A node still alone may then join
    the group of the neighbour with the largest positive gain, provided that
    group has room. Returns the list of groups that were created or grew.
    """
    part = level.partition
    g = level.graph
    new_nodes = list(new_nodes)
    for n in new_nodes:
        if n in part:
            raise ValueError(f"node {n} is already assigned")
        part.new_group(n)
        level.offset[n] = Pose.identity()
    touched = []
    for n in new_nodes:
        if part.size(part.assignment[n]) > 1:
            continue
        best_gain = -1.0
        best = None
        for nb in sorted(set(g.neighbors(n))):
            target = part.assignment[nb]
            if target == part.assignment[n] or part.size(target) >= part.kcap:
                continue
            gain = modularity_gain(level, n, target)
            if gain > best_gain:
                best_gain, best = gain, nb
        if best is not None and best_gain > 0:
            target = part.assignment[best]
            level.representative.pop(n, None)
            part.move(n, target)
            _record_join(level, n, best)
            touched.append(target)
        else:
            touched.append(n)
    for grp in dict.fromkeys(touched):
        if grp in part.members:
            level.representative[grp] = select_representative(level, grp)
    return [grp for grp in dict.fromkeys(touched) if grp in part.members]


def _strongest_edge(level, a, b):
    g = level.graph
    best, best_w = None, -1.0
    for k in g.adjacency[a]:
        if g.edges[k].other(a) == b and level.view.weights[k] > best_w:
            best, best_w = k, level.view.weights[k]
    return best


def _record_join(level, node, neighbour):
    level.join[node] = (neighbour, _strongest_edge(level, node, neighbour))
    level.offset[node] = _chained_offset(level, node)


def _oriented(edge, frm):
    """Measurement of ``edge`` read from ``frm`` to the other endpoint."""
    return edge.measurement if edge.source == frm else mf.inverse(edge.measurement)


def _chained_offset(level, node):
    nb, k = level.join[node]
    return mf.compose(level.offset[nb], _oriented(level.graph.edges[k], nb))


def refresh_offsets(level, group):
    """Recompute member offsets of ``group`` from the current edge measurements."""
    members = level.partition.members[group]
    level.offset[group] = Pose.identity()
    pending = [n for n in members if n != group]
    done = {group}
    while pending:
        progress = False
        for n in list(pending):
            if level.join[n][0] in done:
                level.offset[n] = _chained_offset(level, n)
                done.add(n)
                pending.remove(n)
                progress = True
        if not progress:
            raise AssertionError(f"broken join tree in group {group}")


def select_representative(level: HierarchyLevel, group) -> int:
    """Member with the largest weighted degree inside the group; ties go to the lowest id."""
    members = sorted(level.partition.members[group])
    if len(members) == 1:
        return members[0]
    inside = set(members)
    g = level.graph
    best, best_deg = None, -1.0
    for n in members:
        deg = sum(level.view.weights[k] for k in g.adjacency[n]
                  if g.edges[k].other(n) in inside)
        if deg > best_deg:
            best, best_deg = n, deg
    return best


# --------------------------------------------------------------------------
# condensed edges
# --------------------------------------------------------------------------

def _rep_offset(level, node):
    """Measured pose of ``node`` relative to its group's representative."""
    grp = level.partition.assignment[node]
    rep = level.representative[grp]
    if rep == node:
        return Pose.identity()
    return mf.compose(mf.inverse(level.offset[rep]), level.offset[node])


def condensed_edge(level: HierarchyLevel, k) -> Edge:
    """Edge between the groups of edge ``k``'s endpoints, rebased on representatives."""
    e = level.graph.edges[k]
    a, b = e.source, e.target
    ga, gb = level.partition.assignment[a], level.partition.assignment[b]
    z = mf.compose(mf.compose(_rep_offset(level, a), e.measurement),
                   mf.inverse(_rep_offset(level, b)))
    return Edge(ga, gb, z, e.information)


def group_links(level: HierarchyLevel, group):
    """Strongest underlying edge index for every neighbouring group of ``group``."""
    part = level.partition
    g = level.graph
    best = {}
    for n in part.members[group]:
        for k in g.adjacency[n]:
            other = part.assignment[g.edges[k].other(n)]
            if other == group:
                continue
            w = level.view.weights[k]
            if other not in best or w > best[other][1] or (w == best[other][1] and k < best[other][0]):
                best[other] = (k, w)
    return {other: k for other, (k, _) in best.items()}


def build_next_level(level: HierarchyLevel, kcap=None) -> HierarchyLevel:
    """Graph whose nodes are the groups of ``level`` (posed at their representatives)."""
    part = level.partition
    for n in level.graph.nodes:
        if n not in part:
            raise UnassignedNode(n)
    upper = PoseGraph()
    for grp in sorted(part.members):
        upper.add_node(grp, level.graph.nodes[level.representative[grp]])
    level.links = {}
    for grp in sorted(part.members):
        for other, k in sorted(group_links(level, grp).items()):
            key = (min(grp, other), max(grp, other))
            if key in level.links:
                continue
            level.links[key] = upper.add_edge(condensed_edge(level, k), validate=False)
    return HierarchyLevel(upper, kcap if kcap is not None else part.kcap)


# --------------------------------------------------------------------------
# hierarchy
# --------------------------------------------------------------------------

def _same_edge(a, b):
    return (a.source == b.source and a.target == b.target and a.measurement == b.measurement
            and np.array_equal(a.information, b.information))


def replay_order(graph: PoseGraph):
    """``(node, pose, edges)`` in ascending id order; each edge arrives with its later endpoint."""
    pending = defaultdict(list)
    for e in graph.edges:
        pending[max(e.source, e.target)].append(e)
    for node in sorted(graph.nodes):
        yield node, graph.nodes[node], pending.get(node, [])


class Hierarchy:
    """Levels of progressively coarser graphs; level 0 is the original pose graph.

    Every level, the top one included, keeps its nodes grouped. When the top
    level grows past ``threshold`` nodes its groups become a new top level.

    Pose changes at an upper node reach the level below lazily: ``dirty[l]``
    holds level-``l`` nodes whose latest move has not been applied to their
    members yet. :meth:`materialize` and :meth:`flush` apply pending moves.
    """

    def __init__(self, threshold=DEFAULT_THRESHOLD, kcap=DEFAULT_KCAP):
        if threshold < 1:
            raise ValueError("threshold must be >= 1")
        if kcap < 1:
            raise ValueError("kcap must be >= 1")
        self.threshold = threshold
        self.kcap = kcap
        self.levels = [HierarchyLevel(PoseGraph(), kcap)]
        self.dirty: list[set] = [set()]

    @classmethod
    def from_graph(cls, graph: PoseGraph, threshold=DEFAULT_THRESHOLD, kcap=DEFAULT_KCAP):
        """Stream ``graph`` into a new hierarchy in ascending id order."""
        h = cls(threshold, kcap)
        for node, pose, edges in replay_order(graph):
            h.add_pose(node, pose, edges)
        return h

    @property
    def top(self):
        return len(self.levels) - 1

    @property
    def graph(self) -> PoseGraph:
        return self.levels[0].graph

    def __len__(self):
        return len(self.levels)

    def __repr__(self):
        return f"Hierarchy(sizes={self.sizes()})"

    def sizes(self):
        return [len(lv.graph.nodes) for lv in self.levels]

    def reduction_rates(self):
        s = self.sizes()
        return [a / b for a, b in zip(s, s[1:])]

    def ancestor(self, node, level):
        """Id of the level-``level`` node that contains level-0 ``node``."""
        for l in range(level):
            node = self.levels[l].partition.group_of(node)
        return node

    def copy(self):
        h = Hierarchy.__new__(Hierarchy)
        h.threshold = self.threshold
        h.kcap = self.kcap
        h.levels = [lv.copy() for lv in self.levels]
        h.dirty = [set(d) for d in self.dirty]
        return h

    # -- lazy downward propagation ------------------------------------------

    def push(self, l, node):
        """Move the members of upper node ``node`` (level ``l``) rigidly with it."""
        lower = self.levels[l - 1]
        target = self.levels[l].graph.nodes[node]
        rep = lower.representative[node]
        poses = lower.graph.nodes
        delta = mf.compose(target, mf.inverse(poses[rep]))
        for n in lower.partition.members[node]:
            poses[n] = target if n == rep else mf.compose(delta, poses[n])
            if l - 1 >= 1:
                self.dirty[l - 1].add(n)
        self.dirty[l].discard(node)

    def materialize(self, l, nodes):
        """Apply every pending upper-level move that affects ``nodes`` at level ``l``."""
        for n in nodes:
            chain = []
            x = n
            for lv in range(l, self.top):
                x = self.levels[lv].partition.assignment.get(x)
                if x is None:
                    break
                chain.append((lv + 1, x))
            for lv, x in reversed(chain):
                if x in self.dirty[lv]:
                    self.push(lv, x)

    def flush(self):
        """Apply all pending moves so every level holds current poses."""
        for l in range(self.top, 0, -1):
            for u in sorted(self.dirty[l]):
                self.push(l, u)

    def pending(self):
        return sum(len(d) for d in self.dirty)

    def sync_up(self, l, nodes):
        """Copy representative poses at level ``l`` onto their upper nodes, recursively."""
        while l < self.top and nodes:
            level = self.levels[l]
            upper = self.levels[l + 1].graph.nodes
            moved = []
            for n in nodes:
                grp = level.partition.assignment[n]
                if level.representative[grp] == n:
                    upper[grp] = level.graph.nodes[n]
                    moved.append(grp)
            nodes = moved
            l += 1

    # -- incremental construction ---------------------------------------------

    def add_pose(self, node, pose, edges=()):
        """Insert a level-0 node with its edges and update every level."""
        level = self.levels[0]
        edges = list(edges)
        for e in edges:
            if node not in (e.source, e.target):
                raise ValueError("every new edge must touch the new node")
        level.graph.add_node(node, pose)
        try:
            for e in edges:
                other = e.other(node)
                if other not in level.graph.nodes:
                    raise MissingEndpoint(other)
                if e.source == e.target:
                    raise SelfLoop(node)
                check_information(e.information)
        except Exception:
            del level.graph.nodes[node]
            del level.graph.adjacency[node]
            raise
        level.view.add_node(node)
        new_edges = []
        for e in edges:
            new_edges.append(level.graph.add_edge(e, validate=False))
            level.view.add_edge(e)
        self._update(0, [node], new_edges)
        return self

    def _update(self, l, new_nodes, changed_edges):
        level = self.levels[l]
        part = level.partition
        g = level.graph
        ends = [x for k in changed_edges for x in (g.edges[k].source, g.edges[k].target)]
        around = set()
        for x in ends:
            if x in part:
                around.update(part.members[part.assignment[x]])
        for n in new_nodes:
            for nb in g.neighbors(n):
                if nb in part:
                    around.update(part.members[part.assignment[nb]])
        self.materialize(l, around)
        old_reps = {part.assignment[x]: level.representative[part.assignment[x]] for x in around}

        touched = build_hierarchy_increment(level, new_nodes)
        refresh = set(touched) | {part.assignment[x] for x in ends}
        for grp in refresh:
            refresh_offsets(level, grp)
            level.representative[grp] = select_representative(level, grp)

        if l == self.top:
            self._grow()
            return
        upper = self.levels[l + 1]
        up_new = [grp for grp in sorted(refresh) if grp not in upper.graph.nodes]
        for grp in up_new:
            upper.graph.add_node(grp, g.nodes[level.representative[grp]])
            upper.view.add_node(grp)
        moved = []
        for grp in sorted(refresh):
            rep = level.representative[grp]
            if grp in old_reps and old_reps[grp] != rep:
                upper.graph.nodes[grp] = g.nodes[rep]
                moved.append(grp)
        up_changed = []
        for grp in sorted(refresh):
            for other, k in sorted(group_links(level, grp).items()):
                key = (min(grp, other), max(grp, other))
                ce = condensed_edge(level, k)
                idx = level.links.get(key)
                if idx is None:
                    level.links[key] = upper.graph.add_edge(ce, validate=False)
                    upper.view.add_edge(ce)
                    up_changed.append(level.links[key])
                elif not _same_edge(upper.graph.edges[idx], ce):
                    upper.graph.replace_edge(idx, ce)
                    upper.view.replace_edge(idx, ce)
                    up_changed.append(idx)
        self.sync_up(l + 1, moved)
        if up_new or up_changed:
            self._update(l + 1, up_new, sorted(set(up_changed)))

    def _grow(self):
        while len(self.levels[-1].graph.nodes) > self.threshold:
            top = self.levels[-1]
            if len(top.partition.members) >= len(top.graph.nodes):
                break  # no coarsening possible
            new = build_next_level(top, self.kcap)
            self.levels.append(new)
            self.dirty.append(set())
            build_hierarchy_increment(new, sorted(new.graph.nodes))

    def check(self):
        for l, lv in enumerate(self.levels):
            lv.graph.check()
            lv.partition.check()
            assert set(lv.partition.assignment) == set(lv.graph.nodes)
            assert set(lv.representative) == set(lv.partition.members)
            for grp, rep in lv.representative.items():
                assert rep in lv.partition.members[grp]
            if l + 1 < len(self.levels):
                assert set(self.levels[l + 1].graph.nodes) == set(lv.partition.members)
        for a, b in zip(self.sizes(), self.sizes()[1:]):
            assert b <= a
        return True
