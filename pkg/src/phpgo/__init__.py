"""Hierarchical and partial pose graph optimization on SE(3)."""

from .errors import PhpgoError
from .hierarchy import Hierarchy, build_hierarchy_increment, modularity, modularity_gain
from .manifold import Pose
from .metrics import MetricReport, Trajectory, relative_errors
from .optimizer import OptConfig, OptReport, chi2, optimize, optimize_inplace
from .partial import Mode, PhpgoConfig, bfs_select, optimize_mode, optimize_partial, run_online
from .pose_graph import Edge, PoseGraph, read_g2o, save_g2o
from .simulation import SimConfig, simulate

__version__ = "0.1.0"

__all__ = [
    "PhpgoError", "Hierarchy", "build_hierarchy_increment", "modularity", "modularity_gain",
    "Pose", "MetricReport", "Trajectory", "relative_errors", "OptConfig", "OptReport", "chi2",
    "optimize", "optimize_inplace", "Mode", "PhpgoConfig", "bfs_select", "optimize_mode",
    "optimize_partial", "run_online", "Edge", "PoseGraph", "read_g2o", "save_g2o", "SimConfig",
    "simulate",
]
