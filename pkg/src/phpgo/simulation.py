"""Synthetic Manhattan-world pose graphs with known ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import manifold as mf
from .manifold import Pose
from .metrics import Trajectory
from .pose_graph import Edge, PoseGraph

# information is built from max(sigma, floor) so noise-free graphs stay well defined
_SIGMA_FLOOR = 1e-3

_HEADINGS = ((1, 0), (0, 1), (-1, 0), (0, -1))


@dataclass
class SimConfig:
    n_nodes: int = 1000
    step: float = 1.0
    loop_closure_prob: float = 0.1
    trans_noise_sigma: float = 0.05
    rot_noise_sigma: float = 0.01
    rng_seed: int = 0
    turn_prob: float = 0.2
    world_size: int | None = None

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ValueError("n_nodes must be >= 2")
        if not 0.0 <= self.loop_closure_prob <= 1.0 or not 0.0 <= self.turn_prob <= 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
        if self.trans_noise_sigma < 0 or self.rot_noise_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")
        if self.step <= 0:
            raise ValueError("step must be positive")


def information_matrix(trans_sigma, rot_sigma):
    st = max(trans_sigma, _SIGMA_FLOOR)
    sr = max(rot_sigma, _SIGMA_FLOOR)
    return np.diag([st ** -2] * 3 + [sr ** -2] * 3)


def _walk(cfg, rng):
    """Grid cells and headings of a bounded Manhattan random walk."""
    size = cfg.world_size or max(3, int(math.sqrt(cfg.n_nodes)))
    x = y = size // 2
    h = 0
    cells = [(x, y)]
    heads = [h]
    for _ in range(cfg.n_nodes - 1):
        if rng.random() < cfg.turn_prob:
            h = (h + (1 if rng.random() < 0.5 else 3)) % 4
        options = [h, (h + 1) % 4, (h + 3) % 4, (h + 2) % 4]
        for cand in options:
            dx, dy = _HEADINGS[cand]
            if 0 <= x + dx < size and 0 <= y + dy < size:
                h = cand
                break
        dx, dy = _HEADINGS[h]
        x, y = x + dx, y + dy
        cells.append((x, y))
        heads.append(h)
    return cells, heads


def simulate(cfg: SimConfig):
    """Return ``(noisy_graph, ground_truth)``.

    Odometry links consecutive nodes; a node revisiting an occupied grid cell
    gets, with probability ``loop_closure_prob``, one loop-closure edge to a
    random earlier occupant. Measurements are the true relative transforms
    perturbed on the right by ``exp(noise)``. Node poses in the graph are the
    integrated noisy odometry.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    cells, heads = _walk(cfg, rng)
    gt = []
    for (cx, cy), h in zip(cells, heads):
        yaw = 0.5 * math.pi * h
        gt.append(Pose((math.cos(0.5 * yaw), 0.0, 0.0, math.sin(0.5 * yaw)),
                       (cx * cfg.step, cy * cfg.step, 0.0)))

    pairs = [(i - 1, i) for i in range(1, cfg.n_nodes)]
    occupants = {cells[0]: [0]}
    for i in range(1, cfg.n_nodes):
        prior = occupants.setdefault(cells[i], [])
        candidates = [j for j in prior if j < i - 1]
        if candidates and rng.random() < cfg.loop_closure_prob:
            pairs.append((candidates[int(rng.integers(len(candidates)))], i))
        prior.append(i)

    sigma = np.array([cfg.trans_noise_sigma] * 3 + [cfg.rot_noise_sigma] * 3)
    noise = rng.normal(size=(len(pairs), 6)) * sigma
    nR, nt = mf.se3_exp(noise)
    nq = mf.matrix_to_quat(nR)
    info = information_matrix(cfg.trans_noise_sigma, cfg.rot_noise_sigma)

    measurements = []
    for k, (i, j) in enumerate(pairs):
        true = mf.between(gt[i], gt[j])
        if sigma.any():
            z = mf.compose(true, Pose._raw(tuple(nq[k].tolist()), tuple(nt[k].tolist())))
        else:
            z = true
        measurements.append(z)

    graph = PoseGraph()
    pose = gt[0]
    graph.add_node(0, pose)
    for k in range(cfg.n_nodes - 1):
        pose = mf.compose(pose, measurements[k])
        graph.add_node(k + 1, pose)
    for (i, j), z in zip(pairs, measurements):
        graph.add_edge(Edge(i, j, z, info), validate=False)
    return graph, Trajectory(enumerate(gt))


def circle_loop(n_nodes=50, radius=10.0, information=None):
    """Noise-free planar loop: odometry around a circle plus one closing edge."""
    info = np.eye(6) if information is None else information
    gt = []
    for k in range(n_nodes):
        a = 2.0 * math.pi * k / n_nodes
        yaw = a + 0.5 * math.pi
        gt.append(Pose((math.cos(0.5 * yaw), 0.0, 0.0, math.sin(0.5 * yaw)),
                       (radius * math.cos(a), radius * math.sin(a), 0.0)))
    graph = PoseGraph()
    for k, p in enumerate(gt):
        graph.add_node(k, p)
    for k in range(n_nodes):
        j = (k + 1) % n_nodes
        graph.add_edge(Edge(k, j, mf.between(gt[k], gt[j]), info))
    return graph, Trajectory(enumerate(gt))


def perturb(graph, trans_sigma, rot_sigma, rng, skip=()):
    """Copy of ``graph`` with every node not in ``skip`` moved by ``exp(noise)``."""
    out = graph.copy()
    skip = set(skip)
    for n in sorted(out.nodes):
        if n in skip:
            continue
        d = np.concatenate([rng.normal(scale=trans_sigma, size=3),
                            rng.normal(scale=rot_sigma, size=3)])
        out.nodes[n] = mf.compose(out.nodes[n], mf.exp(d))
    return out
