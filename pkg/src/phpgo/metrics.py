"""Segment-relative trajectory errors (KITTI odometry style) and TUM trajectory files."""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import manifold as mf
from .errors import MalformedLine, MismatchedIds, PathTooShort
from .manifold import Pose

KITTI_SEGMENTS = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0)


class Trajectory:
    """Poses keyed by strictly increasing node ids."""

    def __init__(self, items=()):
        items = list(items)
        self.ids = [int(i) for i, _ in items]
        self.poses = [p for _, p in items]
        if any(b <= a for a, b in zip(self.ids, self.ids[1:])):
            raise ValueError("trajectory ids must be strictly increasing")

    @classmethod
    def from_mapping(cls, poses):
        return cls(sorted(poses.items()))

    @classmethod
    def from_graph(cls, graph):
        return cls.from_mapping(graph.nodes)

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        return iter(zip(self.ids, self.poses))

    def as_dict(self):
        return dict(zip(self.ids, self.poses))

    def arrays(self):
        q = np.array([p.rotation for p in self.poses], dtype=float).reshape(-1, 4)
        t = np.array([p.translation for p in self.poses], dtype=float).reshape(-1, 3)
        return q, t

    def path_length(self):
        _, t = self.arrays()
        return float(np.sum(np.linalg.norm(np.diff(t, axis=0), axis=1)))


@dataclass
class MetricReport:
    ate: float
    are: float
    n_pairs: int


def default_segment_lengths(path_length):
    """KITTI's 100..800 m, shrunk proportionally when the path is shorter than 1.6 km."""
    longest = min(KITTI_SEGMENTS[-1], 0.5 * path_length)
    return [longest * k / len(KITTI_SEGMENTS) for k in range(1, len(KITTI_SEGMENTS) + 1)]


def relative_errors(est: Trajectory, gt: Trajectory, segment_lengths=None, stride=1):
    """Mean translation error per meter and rotation error (rad) per meter.

    For every start node (every ``stride``-th) and segment length ``L``, the
    end node is the first one at least ``L`` meters further along the
    ground-truth path. The pair error is ``inv(rel_gt) * rel_est``.
    """
    if est.ids != gt.ids:
        raise MismatchedIds("estimate and ground truth cover different node ids")
    q_gt, t_gt = gt.arrays()
    q_es, t_es = est.arrays()
    steps = np.linalg.norm(np.diff(t_gt, axis=0), axis=1)
    dist = np.concatenate([[0.0], np.cumsum(steps)])
    if segment_lengths is None:
        segment_lengths = default_segment_lengths(dist[-1] if len(dist) else 0.0)
    segment_lengths = [float(s) for s in segment_lengths]
    if not segment_lengths or min(segment_lengths) <= 0:
        raise ValueError("segment lengths must be positive")
    if len(dist) == 0 or dist[-1] < max(segment_lengths):
        raise PathTooShort(f"path length {dist[-1] if len(dist) else 0.0:g} m is shorter than "
                           f"the longest segment {max(segment_lengths):g} m")

    R_gt, R_es = mf.quat_to_matrix(q_gt), mf.quat_to_matrix(q_es)
    starts = np.arange(0, len(dist), stride)
    t_sum = r_sum = 0.0
    count = 0
    for L in segment_lengths:
        ends = np.searchsorted(dist, dist[starts] + L * (1.0 - 1e-12), side="left")
        ok = ends < len(dist)
        i, j = starts[ok], ends[ok]
        if i.size == 0:
            continue
        Rg, tg = _between(R_gt[i], t_gt[i], R_gt[j], t_gt[j])
        Re, te = _between(R_es[i], t_es[i], R_es[j], t_es[j])
        RE, tE = _between(Rg, tg, Re, te)
        t_sum += float(np.sum(np.linalg.norm(tE, axis=1))) / L
        r_sum += float(np.sum(mf.quat_angle(mf.matrix_to_quat(RE)))) / L
        count += i.size
    if count == 0:
        return MetricReport(0.0, 0.0, 0)
    return MetricReport(t_sum / count, r_sum / count, count)


def _between(Ra, ta, Rb, tb):
    RaT = np.swapaxes(Ra, -1, -2)
    return RaT @ Rb, np.einsum("nij,nj->ni", RaT, tb - ta)


# --------------------------------------------------------------------------
# TUM format: "id tx ty tz qx qy qz qw"
# --------------------------------------------------------------------------

def parse_tum(data) -> Trajectory:
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    items = []
    for lineno, line in enumerate(io.StringIO(data), start=1):
        tokens = line.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        if len(tokens) != 8:
            raise MalformedLine(lineno, f"expected 8 fields, got {len(tokens)}")
        try:
            node = int(tokens[0])
            tx, ty, tz, qx, qy, qz, qw = (float(v) for v in tokens[1:])
            items.append((node, Pose((qw, qx, qy, qz), (tx, ty, tz))))
        except ValueError as exc:
            raise MalformedLine(lineno, str(exc)) from None
    items.sort(key=lambda kv: kv[0])
    return Trajectory(items)


def write_tum(traj: Trajectory) -> bytes:
    lines = []
    for node, p in traj:
        w, x, y, z = p.rotation
        values = p.translation + (x, y, z, w)
        lines.append(f"{node} " + " ".join(format(v, ".17g") for v in values))
    return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""


def read_tum(path) -> Trajectory:
    return parse_tum(Path(path).read_bytes())


def save_tum(traj, path):
    Path(path).write_bytes(write_tum(traj))
