"""Sparse Levenberg-Marquardt pose-graph optimization on SE(3).

The objective is ``F(x) = sum_ij e_ij^T Omega_ij e_ij`` with
``e_ij = log(z_ij^-1 x_i^-1 x_j)``. Each iteration linearizes around the
current estimate, accumulates ``H = sum J^T Omega J`` and ``b = sum J^T Omega e``
over the edges touching free nodes, solves ``(H + lambda diag(H)) dx = -b``
with a sparse Cholesky factorization and retracts ``x_i <- x_i exp(dx_i)``.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import manifold as mf
from .errors import AngleAtPi, NoFixedGauge, NotPositiveDefinite
from .pose_graph import PoseGraph

try:
    from sksparse.cholmod import CholmodNotPositiveDefiniteError
    from sksparse.cholmod import analyze as _cholmod_analyze
except ImportError:  # pragma: no cover - depends on the environment
    _cholmod_analyze = None

HAVE_CHOLMOD = _cholmod_analyze is not None

_MAX_LAMBDA = 1e12
_MIN_STEP = 1e-12


@dataclass
class OptConfig:
    max_iterations: int = 20
    convergence_tol: float = 1e-6
    initial_lambda: float = 1e-4
    lambda_factor: float = 10.0
    fixed_nodes: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.initial_lambda < 0:
            raise ValueError("initial_lambda must be >= 0")
        if self.lambda_factor <= 1:
            raise ValueError("lambda_factor must be > 1")
        self.fixed_nodes = frozenset(self.fixed_nodes)


@dataclass
class OptReport:
    iterations_run: int
    chi2_initial: float
    chi2_final: float
    converged: bool
    wall_time: float
    mode: str = "full"
    level: int = 0
    n_free: int = 0
    n_edges: int = 0


@dataclass
class LinearSystem:
    """``H`` (CSC, 6x6 blocks over ``free``) and the gradient vector ``b``."""

    H: sp.csc_matrix
    b: np.ndarray
    free: list

    @property
    def dim(self):
        return self.b.shape[0]


# --------------------------------------------------------------------------
# single-edge helpers
# --------------------------------------------------------------------------

def edge_error(xi, xj, zij):
    """Residual twist ``log(zij^-1 * xi^-1 * xj)``; zero iff ``xj == xi * zij``."""
    return mf.log(mf.compose(mf.inverse(zij), mf.between(xi, xj)))


def _edge_arrays(graph, edge_ids, node_index):
    edges = [graph.edges[k] for k in edge_ids]
    ei = np.fromiter((node_index[e.source] for e in edges), dtype=np.int64, count=len(edges))
    ej = np.fromiter((node_index[e.target] for e in edges), dtype=np.int64, count=len(edges))
    zq = np.array([e.measurement.rotation for e in edges], dtype=float).reshape(-1, 4)
    zt = np.array([e.measurement.translation for e in edges], dtype=float).reshape(-1, 3)
    info = np.array([e.information for e in edges], dtype=float).reshape(-1, 6, 6)
    return ei, ej, mf.quat_to_matrix(zq), zt, info


def _pose_arrays(graph, nodes):
    q = np.array([graph.nodes[n].rotation for n in nodes], dtype=float).reshape(-1, 4)
    t = np.array([graph.nodes[n].translation for n in nodes], dtype=float).reshape(-1, 3)
    return q, t


def chi2(graph: PoseGraph) -> float:
    """``F(x)`` summed over every edge of the graph."""
    if not graph.edges:
        return 0.0
    nodes = list(graph.nodes)
    index = {n: k for k, n in enumerate(nodes)}
    ei, ej, zR, zt, info = _edge_arrays(graph, range(len(graph.edges)), index)
    q, t = _pose_arrays(graph, nodes)
    R = mf.quat_to_matrix(q)
    e = mf.relative_errors(R[ei], t[ei], R[ej], t[ej], zR, zt)
    return float(np.einsum("mi,mij,mj->", e, info, e))


# --------------------------------------------------------------------------
# linearized problem over a free subset
# --------------------------------------------------------------------------

class _Problem:
    """Edges touching ``free`` packed into arrays, plus the fixed sparse pattern of H."""

    def __init__(self, graph, free):
        self.graph = graph
        self.free = list(free)
        free_set = set(self.free)
        edge_ids = sorted({k for n in self.free for k in graph.adjacency[n]})
        self.edge_ids = edge_ids
        nodes = list(self.free)
        seen = set(nodes)
        for k in edge_ids:
            e = graph.edges[k]
            for n in (e.source, e.target):
                if n not in seen:
                    seen.add(n)
                    nodes.append(n)
        self.nodes = nodes
        index = {n: k for k, n in enumerate(nodes)}
        self.nf = len(self.free)
        self.ei, self.ej, self.zR, self.zt, self.info = _edge_arrays(graph, edge_ids, index)
        self.q, self.t = _pose_arrays(graph, nodes)
        self._build_pattern(free_set)

    def _build_pattern(self, free_set):
        nf = self.nf
        N = 6 * nf
        self.N = N
        fi = self.ei < nf
        fj = self.ej < nf
        # block kinds: 0 -> (i,i), 1 -> (j,j), 2 -> (i,j), 3 -> (j,i)
        masks = [fi, fj, fi & fj, fi & fj]
        rows_b = [self.ei, self.ej, self.ei, self.ej]
        cols_b = [self.ei, self.ej, self.ej, self.ei]
        r6 = np.repeat(np.arange(6), 6)
        c6 = np.tile(np.arange(6), 6)
        rows, cols = [], []
        for mask, rb, cb in zip(masks, rows_b, cols_b):
            rows.append((6 * rb[mask])[:, None] + r6[None, :])
            cols.append((6 * cb[mask])[:, None] + c6[None, :])
        self.block_masks = masks
        if N == 0:
            self.keys_inv = np.zeros(0, dtype=np.int64)
            self.indices = np.zeros(0, dtype=np.int64)
            self.indptr = np.zeros(1, dtype=np.int64)
            self.diag_pos = np.zeros(0, dtype=np.int64)
            self.mirror = np.zeros(0, dtype=np.int64)
            self.nnz = 0
            return
        rows = np.concatenate([r.ravel() for r in rows])
        cols = np.concatenate([c.ravel() for c in cols])
        keys = cols.astype(np.int64) * N + rows
        uniq, inv = np.unique(keys, return_inverse=True)
        self.keys_inv = inv
        self.nnz = uniq.size
        self.indices = (uniq % N).astype(np.int64)
        self.indptr = np.searchsorted(uniq // N, np.arange(N + 1)).astype(np.int64)
        self.diag_pos = np.searchsorted(uniq, np.arange(N, dtype=np.int64) * (N + 1))
        # position of each stored entry's transpose; the pattern is symmetric
        self.mirror = np.searchsorted(uniq, (uniq % N) * N + uniq // N)
        if not np.array_equal(uniq[self.diag_pos], np.arange(N) * (N + 1)):
            raise NotPositiveDefinite("a free node has no constraining edge")

    def residuals(self, q, t, jacobians=False):
        R = mf.quat_to_matrix(q)
        return mf.relative_errors(R[self.ei], t[self.ei], R[self.ej], t[self.ej],
                                  self.zR, self.zt, jacobians=jacobians)

    def chi2(self, q=None, t=None):
        if q is None:
            q, t = self.q, self.t
        if len(self.edge_ids) == 0:
            return 0.0
        e = self.residuals(q, t)
        return float(np.einsum("mi,mij,mj->", e, self.info, e))

    def linearize(self):
        """Return ``(LinearSystem, chi2)`` at the current estimate."""
        nf = self.nf
        if len(self.edge_ids) == 0 or nf == 0:
            H = sp.csc_matrix((self.N, self.N))
            return LinearSystem(H, np.zeros(self.N), self.free), self.chi2()
        e, Ji, Jj = self.residuals(self.q, self.t, jacobians=True)
        OJi = self.info @ Ji
        OJj = self.info @ Jj
        JiT = np.swapaxes(Ji, 1, 2)
        JjT = np.swapaxes(Jj, 1, 2)
        Hii = JiT @ OJi
        Hjj = JjT @ OJj
        Hij = JiT @ OJj
        Hji = np.swapaxes(Hij, 1, 2)
        Oe = np.einsum("mij,mj->mi", self.info, e)
        bi = np.einsum("mji,mj->mi", Ji, Oe)
        bj = np.einsum("mji,mj->mi", Jj, Oe)

        vals = np.concatenate([blk[m].ravel() for blk, m in
                               zip((Hii, Hjj, Hij, Hji), self.block_masks)])
        data = np.bincount(self.keys_inv, weights=vals, minlength=self.nnz)
        data = 0.5 * (data + data[self.mirror])  # exact symmetry despite summation order
        H = sp.csc_matrix((data, self.indices, self.indptr), shape=(self.N, self.N))

        b = np.zeros((nf, 6))
        fi, fj = self.block_masks[0], self.block_masks[1]
        np.add.at(b, self.ei[fi], bi[fi])
        np.add.at(b, self.ej[fj], bj[fj])
        chi = float(np.einsum("mi,mi->", e, Oe))
        return LinearSystem(H, b.ravel(), self.free), chi

    def retract(self, dx):
        d = dx.reshape(-1, 6)
        q = self.q.copy()
        t = self.t.copy()
        R = mf.quat_to_matrix(q[: self.nf])
        dR, dt = mf.se3_exp(d)
        t[: self.nf] = t[: self.nf] + np.einsum("nij,nj->ni", R, dt)
        q[: self.nf] = mf.quat_normalize(mf.quat_multiply(q[: self.nf], mf.matrix_to_quat(dR)))
        return q, t

    def write_back(self):
        nodes = self.graph.nodes
        for k, n in enumerate(self.free):
            nodes[n] = mf.Pose._raw(tuple(self.q[k].tolist()), tuple(self.t[k].tolist()))


# --------------------------------------------------------------------------
# sparse solve
# --------------------------------------------------------------------------

class _Factorizer:
    """Sparse Cholesky with a fill-reducing ordering, reusing the symbolic analysis."""

    def __init__(self, backend=None):
        if backend is None:
            backend = "cholmod" if HAVE_CHOLMOD else "superlu"
        if backend == "cholmod" and not HAVE_CHOLMOD:
            raise RuntimeError("scikit-sparse is not installed")
        if backend not in ("cholmod", "superlu"):
            raise ValueError(f"unknown backend {backend!r}")
        self.backend = backend
        self._symbolic = None

    def solve(self, A, rhs):
        if A.shape[0] == 0:
            return np.zeros(0)
        if self.backend == "cholmod":
            try:
                if self._symbolic is None:
                    self._symbolic = _cholmod_analyze(A, mode="simplicial", ordering_method="amd")
                factor = self._symbolic.cholesky(A)
            except CholmodNotPositiveDefiniteError as exc:
                raise NotPositiveDefinite(str(exc)) from None
            # simplicial CHOLMOD factors LDL^T and does not fail on indefinite input
            d = factor.D()
            if not np.all(d > 0.0) or not np.all(np.isfinite(d)):
                raise NotPositiveDefinite("non-positive pivot in LDL^T factorization")
            return factor(rhs)
        # SuperLU on A + A^T minimum-degree ordering, no pivoting; positive pivots <=> SPD
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", spla.MatrixRankWarning)
            try:
                lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                               options={"SymmetricMode": True})
            except RuntimeError as exc:
                raise NotPositiveDefinite(str(exc)) from None
        piv = lu.U.diagonal()
        if not np.all(piv > 0.0) or not np.all(np.isfinite(piv)):
            raise NotPositiveDefinite("non-positive pivot in symmetric factorization")
        return lu.solve(rhs)


def _damped(H, lam, diag_pos=None):
    A = H.copy()
    if lam:
        if diag_pos is None:
            A = A + lam * sp.diags(H.diagonal(), format="csc")
        else:
            A.data[diag_pos] *= 1.0 + lam
    return sp.csc_matrix(A)


def build_system(graph: PoseGraph, free) -> LinearSystem:
    """Assemble ``H`` and ``b`` over the ordered ``free`` nodes.

    Edges whose endpoints are both fixed are skipped; a fixed endpoint's
    Jacobian block is dropped.
    """
    free = list(free)
    for n in free:
        if n not in graph.nodes:
            raise KeyError(n)
    system, _ = _Problem(graph, free).linearize()
    return system


def solve_system(system: LinearSystem, lam=0.0, backend=None) -> np.ndarray:
    """Solve ``(H + lam * diag(H)) dx = -b``; raises :class:`NotPositiveDefinite`."""
    if system.dim == 0:
        return np.zeros(0)
    A = _damped(system.H, lam)
    return _Factorizer(backend).solve(A, -system.b)


def apply_increment(graph: PoseGraph, free, dx) -> PoseGraph:
    """New graph with ``pose_i <- pose_i * exp(dx_i)`` for each free node."""
    free = list(free)
    dx = np.asarray(dx, dtype=float)
    if dx.shape != (6 * len(free),):
        raise ValueError(f"increment has shape {dx.shape}, expected ({6 * len(free)},)")
    out = graph.copy()
    for k, n in enumerate(free):
        out.nodes[n] = mf.compose(out.nodes[n], mf.exp(dx[6 * k: 6 * k + 6]))
    return out


# --------------------------------------------------------------------------
# Levenberg-Marquardt driver
# --------------------------------------------------------------------------

def default_anchors(graph: PoseGraph):
    """Lowest node id of every connected component."""
    return {comp[0] for comp in graph.components()}


def _resolve_free(graph, config, free):
    fixed = set(config.fixed_nodes)
    if free is None:
        if not fixed:
            fixed = default_anchors(graph)
        else:
            for comp in graph.components():
                if not fixed.intersection(comp):
                    raise NoFixedGauge(f"component containing node {comp[0]} has no fixed node")
        return sorted(n for n in graph.nodes if n not in fixed)

    free = [n for n in free if n not in fixed]
    free_set = set(free)
    # every connected piece of the free set must touch something held fixed
    seen = set()
    for start in free:
        if start in seen:
            continue
        seen.add(start)
        stack = [start]
        anchored = False
        while stack:
            n = stack.pop()
            for m in graph.neighbors(n):
                if m in free_set:
                    if m not in seen:
                        seen.add(m)
                        stack.append(m)
                else:
                    anchored = True
        if not anchored:
            raise NoFixedGauge(f"free nodes around {start} have no fixed neighbour")
    return free


def optimize_inplace(graph: PoseGraph, config: OptConfig | None = None, free=None,
                     backend=None) -> OptReport:
    """Run LM on ``graph`` in place; only free node poses are written.

    ``free=None`` frees every node except ``config.fixed_nodes`` (or, when that
    is empty, the lowest id of each component). An explicit ``free`` list
    restricts the problem to edges touching those nodes; every other node is
    held constant.
    """
    config = config or OptConfig()
    start = time.perf_counter()
    free = [n for n in _resolve_free(graph, config, free) if graph.adjacency[n]]
    problem = _Problem(graph, free)
    factorizer = _Factorizer(backend)

    chi = chi_initial = problem.chi2()
    lam = config.initial_lambda
    converged = False
    iterations = 0
    system = None
    if problem.N == 0 or chi == 0.0:
        converged = True
    while not converged and iterations < config.max_iterations:
        if system is None:
            system, chi = problem.linearize()
        try:
            A = _damped(system.H, lam, problem.diag_pos)
            dx = factorizer.solve(A, -system.b)
        except NotPositiveDefinite:
            lam = max(lam, 1e-9) * config.lambda_factor
            if lam > _MAX_LAMBDA:
                # damping scales diag(H), so a structurally singular H never recovers
                raise
            continue
        iterations += 1
        if np.max(np.abs(dx)) < _MIN_STEP:
            converged = True
            break
        q, t = problem.retract(dx)
        try:
            new_chi = problem.chi2(q, t)
        except AngleAtPi:
            new_chi = np.inf
        if new_chi < chi:
            rel = (chi - new_chi) / chi
            problem.q, problem.t = q, t
            chi = new_chi
            lam = lam / config.lambda_factor
            system = None
            if rel < config.convergence_tol or chi == 0.0:
                converged = True
        else:
            lam = max(lam, 1e-9) * config.lambda_factor
            if lam > _MAX_LAMBDA:
                break
    problem.write_back()
    return OptReport(
        iterations_run=iterations,
        chi2_initial=chi_initial,
        chi2_final=chi,
        converged=converged,
        wall_time=time.perf_counter() - start,
        n_free=len(free),
        n_edges=len(problem.edge_ids),
    )


def optimize(graph: PoseGraph, config: OptConfig | None = None, free=None, backend=None):
    """Optimize a copy of ``graph``; returns ``(optimized_graph, OptReport)``."""
    out = graph.copy()
    report = optimize_inplace(out, config, free=free, backend=backend)
    return out, report
