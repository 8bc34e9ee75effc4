"""Shared fixtures and independent reference implementations.

The oracles here deliberately avoid the package's own closed forms: the SE(3)
exponential is ``scipy.linalg.expm`` of the 4x4 twist matrix and the logarithm
goes through ``scipy.spatial.transform.Rotation`` plus the V block of an
augmented matrix exponential.
"""

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import settings
from scipy.spatial.transform import Rotation

from phpgo.manifold import Pose
from phpgo.pose_graph import Edge, PoseGraph

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


def hat(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def twist_matrix(xi):
    M = np.zeros((4, 4))
    M[:3, :3] = hat(xi[3:])
    M[:3, 3] = xi[:3]
    return M


def ref_exp(xi):
    """4x4 homogeneous transform of a twist ``[rho, theta]``."""
    return sla.expm(twist_matrix(np.asarray(xi, dtype=float)))


def ref_log(T):
    theta = Rotation.from_matrix(T[:3, :3]).as_rotvec()
    B = np.zeros((6, 6))
    B[:3, :3] = hat(theta)
    B[:3, 3:] = np.eye(3)
    V = sla.expm(B)[:3, 3:]
    return np.concatenate([np.linalg.solve(V, T[:3, 3]), theta])


def to_matrix(p: Pose):
    return p.matrix()


def from_matrix(T):
    return Pose.from_matrix(T)


def ref_error(Ti, Tj, Tz):
    return ref_log(np.linalg.inv(Tz) @ np.linalg.inv(Ti) @ Tj)


def random_pose(rng, trans=2.0, max_angle=np.pi * 0.9):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    return Pose.from_rotvec(axis * angle, rng.normal(scale=trans, size=3))


def random_information(rng, scale=1.0):
    A = rng.normal(size=(6, 6))
    return scale * (A @ A.T + 6.0 * np.eye(6))


def random_graph(rng, n_nodes, extra_edges=0, noise=0.1, info=None):
    """Connected graph: a chain plus random chords, measurements off by ``noise``."""
    g = PoseGraph()
    poses = [random_pose(rng, trans=3.0) for _ in range(n_nodes)]
    for i, p in enumerate(poses):
        g.add_node(i, p)
    pairs = [(i - 1, i) for i in range(1, n_nodes)]
    for _ in range(extra_edges):
        a, b = sorted(rng.choice(n_nodes, size=2, replace=False))
        pairs.append((int(a), int(b)))
    for a, b in pairs:
        z = poses[a].inverse() @ poses[b]
        z = z @ Pose.from_rotvec(rng.normal(scale=noise, size=3), rng.normal(scale=noise, size=3))
        g.add_edge(Edge(a, b, z, info if info is not None else random_information(rng)))
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
