import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from phpgo import manifold as mf
from phpgo.errors import EmptyGraph, NotSingleton, UnassignedNode
from phpgo.hierarchy import (WEIGHT_EPS, Hierarchy, HierarchyLevel, Partition, WeightedView,
                             build_hierarchy_increment, build_next_level, edge_weight,
                             modularity, modularity_gain, select_representative)
from phpgo.manifold import Pose
from phpgo.optimizer import chi2
from phpgo.pose_graph import Edge, PoseGraph
from phpgo.simulation import SimConfig, simulate

from .oracle import brute_q

UNIT = Pose(translation=(1.0, 0.0, 0.0))  # weight 1 under identity information


def unit_graph(n, pairs):
    g = PoseGraph()
    for i in range(n):
        g.add_node(i, Pose(translation=(float(i), 0.0, 0.0)))
    for a, b in pairs:
        g.add_edge(Edge(a, b, UNIT, np.eye(6)))
    return g


def singleton_level(g, kcap=3):
    lv = HierarchyLevel(g, kcap)
    for n in sorted(g.nodes):
        lv.partition.new_group(n)
    return lv


# -- weights and modularity -------------------------------------------------------

def test_edge_weight_examples():
    assert edge_weight(Edge(0, 1, UNIT, np.eye(6))) == 1.0
    z = mf.exp([1.0, 1.0, 0.0, 0.0, 0.0, 0.0])
    assert edge_weight(Edge(0, 1, z, np.eye(6))) == pytest.approx(0.5, rel=1e-14)
    assert edge_weight(Edge(0, 1, Pose.identity(), np.eye(6))) == 1.0 / WEIGHT_EPS


def test_weighted_view_totals(rng):
    g = unit_graph(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
    v = WeightedView(g)
    assert v.m == 4.0
    assert v.degree == {0: 2.0, 1: 2.0, 2: 2.0, 3: 2.0}


def test_modularity_two_nodes():
    g = unit_graph(2, [(0, 1)])
    lv = singleton_level(g)
    assert modularity(lv.view, lv.partition, g) == pytest.approx(-0.5, abs=1e-15)
    lv.partition.move(1, 0)
    assert modularity(lv.view, lv.partition, g) == pytest.approx(0.0, abs=1e-15)


def test_modularity_two_triangles():
    g = unit_graph(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)])
    lv = singleton_level(g, kcap=3)
    lv.partition.move(1, 0)
    lv.partition.move(2, 0)
    lv.partition.move(4, 3)
    lv.partition.move(5, 3)
    q = modularity(lv.view, lv.partition, g)
    assert q == pytest.approx(brute_q(g, lv.partition.assignment), abs=1e-14)
    # hand value: (12 - 2 * 49 / 14) / 14
    assert q == pytest.approx(5.0 / 14.0, abs=1e-14)


def test_modularity_empty_graph():
    g = unit_graph(2, [])
    lv = singleton_level(g)
    with pytest.raises(EmptyGraph):
        modularity(lv.view, lv.partition, g)
    with pytest.raises(EmptyGraph):
        modularity_gain(lv, 0, 1)


@st.composite
def small_graphs(draw):
    n = draw(st.integers(2, 8))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    chosen = draw(st.lists(st.sampled_from(pairs), min_size=1, max_size=len(pairs), unique=True))
    g = PoseGraph()
    for i in range(n):
        g.add_node(i, Pose.identity())
    for a, b in chosen:
        t = draw(st.floats(0.2, 3.0))
        g.add_edge(Edge(a, b, Pose(translation=(t, 0.0, 0.0)), np.eye(6)))
    groups = draw(st.lists(st.integers(0, n - 1), min_size=n, max_size=n))
    return g, groups


def _level_from_labels(g, labels):
    lv = HierarchyLevel(g, kcap=len(labels))
    part = lv.partition
    for n in range(len(labels)):
        part.new_group(n)
    for n, lab in enumerate(labels):
        target = part.assignment[lab]
        if target != part.assignment[n] and part.size(part.assignment[n]) == 1:
            part.move(n, target)
    return lv


@given(small_graphs())
def test_modularity_matches_pair_sum_and_bounds(case):
    g, labels = case
    lv = _level_from_labels(g, labels)
    q = modularity(lv.view, lv.partition, g)
    assert -1.0 <= q <= 1.0
    assert q == pytest.approx(brute_q(g, lv.partition.assignment), abs=1e-12)


# -- gain -------------------------------------------------------------------------

def test_gain_without_link_is_negative():
    g = unit_graph(3, [(0, 1), (1, 2)])
    lv = singleton_level(g)
    # node 0 has no edge into {2}: -sigma_group * k / (2 m^2) = -1 * 1 / 8
    assert modularity_gain(lv, 0, 2) == pytest.approx(-1.0 / 8.0, abs=1e-15)


def test_gain_two_nodes_equals_modularity_change():
    g = unit_graph(2, [(0, 1)])
    lv = singleton_level(g)
    # Q goes from -1/2 (apart) to 0 (together)
    assert modularity_gain(lv, 1, 0) == pytest.approx(0.5, abs=1e-15)


def test_gain_requires_singleton():
    g = unit_graph(3, [(0, 1), (1, 2)])
    lv = singleton_level(g)
    lv.partition.move(1, 0)
    with pytest.raises(NotSingleton):
        modularity_gain(lv, 0, 2)
    with pytest.raises(ValueError):
        modularity_gain(lv, 2, 2)


@given(small_graphs())
def test_gain_equals_brute_force_difference(case):
    g, labels = case
    lv = _level_from_labels(g, labels)
    part = lv.partition
    for node in g.nodes:
        if part.size(part.assignment[node]) != 1:
            continue
        before = brute_q(g, part.assignment)
        for target in {part.assignment[nb] for nb in g.neighbors(node)} - {part.assignment[node]}:
            after = dict(part.assignment)
            after[node] = target
            assert modularity_gain(lv, node, target) == pytest.approx(
                brute_q(g, after) - before, abs=1e-12)


# -- Algorithm 1 ------------------------------------------------------------------

def scripted_increment(g, assignment, new_nodes, kcap):
    """Plain re-statement of the grouping pass using brute-force modularity."""
    assignment = dict(assignment)
    for n in new_nodes:
        assignment[n] = n
    for n in new_nodes:
        if sum(1 for v in assignment.values() if v == assignment[n]) > 1:
            continue
        best, best_gain = None, -1.0
        for nb in sorted(set(g.neighbors(n))):
            target = assignment[nb]
            size = sum(1 for v in assignment.values() if v == target)
            if target == assignment[n] or size >= kcap:
                continue
            trial = dict(assignment)
            trial[n] = target
            gain = brute_q(g, trial) - brute_q(g, assignment)
            if gain > best_gain + 1e-12:
                best, best_gain = target, gain
        if best is not None and best_gain > 1e-12:
            assignment[n] = best
    return assignment


def test_increment_empty_and_isolated():
    g = unit_graph(3, [(0, 1)])
    lv = HierarchyLevel(g, 3)
    assert build_hierarchy_increment(lv, []) == []
    assert lv.partition.assignment == {}
    build_hierarchy_increment(lv, [0, 1, 2])
    assert lv.partition.members[2] == [2]


def test_increment_nine_chain_hand_trace():
    g = unit_graph(9, [(i, i + 1) for i in range(8)])
    lv = HierarchyLevel(g, 3)
    build_hierarchy_increment(lv, range(9))
    groups = sorted(sorted(v) for v in lv.partition.members.values())
    assert groups == [[0, 1], [2, 3], [4, 5], [6, 7, 8]]
    expected = scripted_increment(g, {}, list(range(9)), 3)
    assert lv.partition.assignment == expected


@given(small_graphs(), st.integers(1, 4))
def test_increment_matches_scripted_trace(case, kcap):
    g, _ = case
    lv = HierarchyLevel(g, kcap)
    build_hierarchy_increment(lv, sorted(g.nodes))
    assert lv.partition.assignment == scripted_increment(g, {}, sorted(g.nodes), kcap)
    lv.partition.check()


@given(st.integers(0, 2**32 - 1), st.integers(10, 120), st.integers(1, 4))
def test_streaming_never_reassigns(seed, n, kcap):
    g, _ = simulate(SimConfig(n_nodes=n, rng_seed=seed, loop_closure_prob=0.5))
    h = Hierarchy(threshold=20, kcap=kcap)
    from phpgo.hierarchy import replay_order
    history = [dict() for _ in range(8)]
    for node, pose, edges in replay_order(g):
        h.add_pose(node, pose, edges)
        for l, lv in enumerate(h.levels):
            now = lv.partition.assignment
            for x, grp in history[l].items():
                assert now[x] == grp
            history[l] = dict(now)
            assert max(len(m) for m in lv.partition.members.values()) <= kcap
    h.check()


def test_same_input_same_partition():
    g, _ = simulate(SimConfig(n_nodes=700, rng_seed=5))
    a, b = Hierarchy.from_graph(g), Hierarchy.from_graph(g)
    assert [lv.partition.assignment for lv in a.levels] == [lv.partition.assignment for lv in b.levels]


# -- representatives and next level ------------------------------------------------

def test_select_representative():
    g = unit_graph(4, [(0, 1), (1, 2), (2, 3)])
    lv = singleton_level(g)
    assert select_representative(lv, 3) == 3
    lv.partition.move(1, 0)
    lv.partition.move(2, 0)
    assert select_representative(lv, 0) == 1
    tri = unit_graph(3, [(0, 1), (1, 2), (0, 2)])
    lv = singleton_level(tri)
    lv.partition.move(0, 2)
    lv.partition.move(1, 2)
    assert select_representative(lv, 2) == 0


def _streamed(n, pairs, threshold=1000):
    h = Hierarchy(threshold=threshold)
    truth = {i: Pose(translation=(float(i), 0.0, 0.0)) for i in range(n)}
    for i in range(n):
        edges = [Edge(a, b, mf.between(truth[a], truth[b]), np.eye(6))
                 for a, b in pairs if max(a, b) == i]
        h.add_pose(i, truth[i], edges)
    return h


def test_next_level_of_singletons_is_isomorphic(rng):
    g = unit_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)])
    lv = singleton_level(g, kcap=1)
    for n in g.nodes:
        lv.representative[n] = n
        lv.offset[n] = Pose.identity()
    up = build_next_level(lv).graph
    assert sorted(up.nodes) == sorted(g.nodes)
    assert [(e.source, e.target) for e in up.edges] == [(0, 1), (0, 4), (1, 2), (2, 3), (3, 4)]
    original = {(e.source, e.target): e for e in g.edges}
    for e in up.edges:
        f = original[(e.source, e.target)]
        assert e.measurement.allclose(f.measurement, atol=1e-15)
        np.testing.assert_array_equal(e.information, f.information)


def test_next_level_single_link():
    h = _streamed(4, [(0, 1), (2, 3), (1, 2)])
    lv = h.levels[0]
    assert len(lv.partition.members) == 2
    assert len(build_next_level(lv).graph.edges) == 1


def test_nine_chain_coarsens_to_three_chain():
    h = _streamed(9, [(i, i + 1) for i in range(8)])
    lv = h.levels[0]
    assert sorted(sorted(v) for v in lv.partition.members.values()) == [[0, 1, 2], [3, 4, 5],
                                                                        [6, 7, 8]]
    up = build_next_level(lv).graph
    assert sorted(up.nodes) == [0, 3, 6]
    assert [(e.source, e.target) for e in up.edges] == [(0, 3), (3, 6)]
    for e in up.edges:
        assert e.measurement.allclose(Pose(translation=(3.0, 0.0, 0.0)), atol=1e-12)
    assert chi2(up) <= 1e-24


def test_next_level_needs_full_assignment():
    g = unit_graph(2, [(0, 1)])
    lv = HierarchyLevel(g, 3)
    with pytest.raises(UnassignedNode):
        build_next_level(lv)


def test_partition_rejects_bad_cap():
    with pytest.raises(ValueError):
        Partition(0)


# -- hierarchy --------------------------------------------------------------------

def test_threshold_trigger():
    h = _streamed(300, [(i, i + 1) for i in range(299)], threshold=300)
    assert len(h.levels) == 1
    h.add_pose(300, Pose(translation=(300.0, 0.0, 0.0)), [Edge(299, 300, UNIT, np.eye(6))])
    assert len(h.levels) == 2
    h.check()


def test_noise_free_levels_are_consistent():
    g, _ = simulate(SimConfig(n_nodes=1500, rng_seed=1, trans_noise_sigma=0.0,
                              rot_noise_sigma=0.0))
    h = Hierarchy.from_graph(g)
    h.check()
    assert len(h.levels) >= 3
    for lv in h.levels:
        assert chi2(lv.graph) <= 1e-12


def test_sizes_shrink_by_at_most_cap():
    g, _ = simulate(SimConfig(n_nodes=2000, rng_seed=2))
    h = Hierarchy.from_graph(g)
    for rate in h.reduction_rates():
        assert 1.0 <= rate <= h.kcap


def test_lazy_and_eager_propagation_agree(rng):
    g, _ = simulate(SimConfig(n_nodes=1200, rng_seed=3))
    h = Hierarchy.from_graph(g)
    eager = h.copy()
    top = h.top
    for u in sorted(h.levels[top].graph.nodes):
        new = mf.compose(mf.exp(rng.normal(scale=0.05, size=6)), h.levels[top].graph.nodes[u])
        h.levels[top].graph.nodes[u] = new
        eager.levels[top].graph.nodes[u] = new
        h.dirty[top].add(u)
    for l in range(top, 0, -1):
        for u in sorted(eager.levels[l].graph.nodes):
            eager.push(l, u)
    h.flush()
    assert h.pending() == 0 and eager.pending() == 0
    for n in g.nodes:
        assert h.graph.nodes[n].allclose(eager.graph.nodes[n], atol=1e-12)


def test_add_pose_validation():
    h = Hierarchy()
    h.add_pose(0, Pose.identity())
    with pytest.raises(ValueError):
        h.add_pose(1, Pose.identity(), [Edge(0, 5, UNIT, np.eye(6))])
    assert 1 not in h.graph.nodes
    with pytest.raises(ValueError):
        Hierarchy(threshold=0)
