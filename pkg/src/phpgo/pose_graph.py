"""Pose-graph data model and g2o text I/O."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (DuplicateNode, InvalidInformation, MalformedLine, MissingEndpoint,
                     SelfLoop)
from .manifold import Pose

log = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-9
PSD_TOL = -1e-9

VERTEX_TAG = "VERTEX_SE3:QUAT"
EDGE_TAG = "EDGE_SE3:QUAT"

_TRIU = np.triu_indices(6)


@dataclass(frozen=True, eq=False)
class Edge:
    """Relative-pose measurement ``source -> target`` with a 6x6 information matrix.

    The information matrix is ordered like the twists: translation first, then
    rotation.
    """

    source: int
    target: int
    measurement: Pose
    information: np.ndarray

    def __post_init__(self):
        info = np.array(self.information, dtype=float).reshape(6, 6)
        info.setflags(write=False)
        object.__setattr__(self, "information", info)

    def other(self, node):
        return self.target if node == self.source else self.source


def check_information(info):
    info = np.asarray(info, dtype=float)
    if info.shape != (6, 6) or not np.all(np.isfinite(info)):
        raise InvalidInformation("information must be a finite 6x6 matrix")
    if np.max(np.abs(info - info.T)) > SYMMETRY_TOL:
        raise InvalidInformation("information matrix is not symmetric")
    lo = np.linalg.eigvalsh(0.5 * (info + info.T))[0]
    if lo < PSD_TOL:
        raise InvalidInformation(f"information matrix is indefinite (min eigenvalue {lo:g})")


class PoseGraph:
    """Nodes (id -> :class:`Pose`), directed edges and an undirected adjacency index.

    ``adjacency[n]`` lists the indices of all edges incident to ``n``
    regardless of direction. Mutating methods return ``self``.
    """

    def __init__(self):
        self.nodes: dict[int, Pose] = {}
        self.edges: list[Edge] = []
        self.adjacency: dict[int, list[int]] = {}

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, node):
        return node in self.nodes

    def __repr__(self):
        return f"PoseGraph(nodes={len(self.nodes)}, edges={len(self.edges)})"

    def add_node(self, node, pose):
        node = int(node)
        if node < 0:
            raise ValueError("node ids must be non-negative")
        if node in self.nodes:
            raise DuplicateNode(node)
        self.nodes[node] = pose
        self.adjacency[node] = []
        return self

    def add_edge(self, edge, validate=True):
        """Append ``edge`` and return its index."""
        if edge.source == edge.target:
            raise SelfLoop(edge.source)
        for n in (edge.source, edge.target):
            if n not in self.nodes:
                raise MissingEndpoint(n)
        if validate:
            check_information(edge.information)
        idx = len(self.edges)
        self.edges.append(edge)
        self.adjacency[edge.source].append(idx)
        self.adjacency[edge.target].append(idx)
        return idx

    def replace_edge(self, idx, edge):
        """Swap edge ``idx`` for one joining the same (unordered) pair of nodes."""
        old = self.edges[idx]
        if {old.source, old.target} != {edge.source, edge.target}:
            raise ValueError("replacement edge must join the same nodes")
        self.edges[idx] = edge

    def set_pose(self, node, pose):
        if node not in self.nodes:
            raise KeyError(node)
        self.nodes[node] = pose

    def neighbors(self, node):
        return [self.edges[i].other(node) for i in self.adjacency[node]]

    def copy(self):
        g = PoseGraph()
        g.nodes = dict(self.nodes)
        g.edges = list(self.edges)
        g.adjacency = {n: list(a) for n, a in self.adjacency.items()}
        return g

    def check(self):
        """Verify the structural invariants; raises ``AssertionError`` on violation."""
        total = sum(len(a) for a in self.adjacency.values())
        assert total == 2 * len(self.edges), "adjacency size mismatch"
        assert set(self.adjacency) == set(self.nodes), "adjacency keys differ from nodes"
        for idx, e in enumerate(self.edges):
            assert e.source in self.nodes and e.target in self.nodes
            assert idx in self.adjacency[e.source] and idx in self.adjacency[e.target]
        return True

    def components(self):
        """Connected components (undirected), each as a sorted list of node ids."""
        seen = set()
        out = []
        for start in sorted(self.nodes):
            if start in seen:
                continue
            comp = [start]
            seen.add(start)
            stack = [start]
            while stack:
                n = stack.pop()
                for m in self.neighbors(n):
                    if m not in seen:
                        seen.add(m)
                        comp.append(m)
                        stack.append(m)
            out.append(sorted(comp))
        return out


# --------------------------------------------------------------------------
# g2o
# --------------------------------------------------------------------------

def _floats(tokens, lineno):
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise MalformedLine(lineno, f"non-numeric token ({exc})") from None


def _node_id(token, lineno):
    try:
        value = int(token)
    except ValueError:
        raise MalformedLine(lineno, f"bad node id {token!r}") from None
    if value < 0:
        raise MalformedLine(lineno, f"negative node id {value}")
    return value


def _pose_from_tokens(v):
    tx, ty, tz, qx, qy, qz, qw = v
    return Pose((qw, qx, qy, qz), (tx, ty, tz))


def parse_g2o(data) -> PoseGraph:
    """Parse ``VERTEX_SE3:QUAT`` / ``EDGE_SE3:QUAT`` records from bytes or text.

    Unknown tags are skipped; their count is logged as a warning.
    """
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    graph = PoseGraph()
    pending = []
    skipped = 0
    for lineno, line in enumerate(io.StringIO(data), start=1):
        tokens = line.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        tag = tokens[0]
        if tag == VERTEX_TAG:
            if len(tokens) != 9:
                raise MalformedLine(lineno, f"{VERTEX_TAG} expects 8 fields, got {len(tokens) - 1}")
            node = _node_id(tokens[1], lineno)
            values = _floats(tokens[2:], lineno)
            try:
                graph.add_node(node, _pose_from_tokens(values))
            except ValueError as exc:
                raise MalformedLine(lineno, str(exc)) from None
            except DuplicateNode:
                raise MalformedLine(lineno, f"duplicate vertex {node}") from None
        elif tag == EDGE_TAG:
            if len(tokens) != 31:
                raise MalformedLine(lineno, f"{EDGE_TAG} expects 30 fields, got {len(tokens) - 1}")
            i = _node_id(tokens[1], lineno)
            j = _node_id(tokens[2], lineno)
            values = _floats(tokens[3:], lineno)
            info = np.zeros((6, 6))
            info[_TRIU] = values[7:]
            info = info + np.triu(info, 1).T
            try:
                z = _pose_from_tokens(values[:7])
            except ValueError as exc:
                raise MalformedLine(lineno, str(exc)) from None
            pending.append((lineno, Edge(i, j, z, info)))
        else:
            skipped += 1
    for lineno, edge in pending:
        try:
            graph.add_edge(edge)
        except MissingEndpoint:
            raise
        except (InvalidInformation, SelfLoop) as exc:
            raise MalformedLine(lineno, f"{type(exc).__name__}: {exc}") from None
    if skipped:
        log.warning("skipped %d g2o line(s) with unsupported tags", skipped)
    return graph


def _fmt(values):
    return " ".join(format(float(v), ".17g") for v in values)


def write_g2o(graph: PoseGraph) -> bytes:
    """Vertices in ascending id order, then edges in insertion order."""
    lines = []
    for node in sorted(graph.nodes):
        p = graph.nodes[node]
        w, x, y, z = p.rotation
        lines.append(f"{VERTEX_TAG} {node} {_fmt(p.translation + (x, y, z, w))}")
    for e in graph.edges:
        w, x, y, z = e.measurement.rotation
        values = e.measurement.translation + (x, y, z, w) + tuple(e.information[_TRIU])
        lines.append(f"{EDGE_TAG} {e.source} {e.target} {_fmt(values)}")
    if not lines:
        return b""
    return ("\n".join(lines) + "\n").encode("utf-8")


def read_g2o(path) -> PoseGraph:
    return parse_g2o(Path(path).read_bytes())


def save_g2o(graph, path):
    Path(path).write_bytes(write_g2o(graph))
