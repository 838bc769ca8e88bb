import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dagagg.topology import (FeatureAssignment, best_case_assignment, build_chain,
                             build_hub_and_spokes, build_random_dag, build_random_tree,
                             coverage_window_check, cyclic_assignment, dump_graph, from_parents,
                             load_graph, longest_path, minimal_covering_window,
                             random_feature_assignment, required_window)


def _to_nx(dag):
    g = nx.DiGraph()
    g.add_nodes_from(range(dag.node_count))
    g.add_edges_from(dag.edges())
    return g


def test_chain_depths():
    dag = build_chain(5)
    assert dag.depth == (1, 2, 3, 4, 5)
    assert dag.topo_order == (0, 1, 2, 3, 4)
    assert longest_path(dag) == [0, 1, 2, 3, 4]


def test_hub_and_spokes():
    dag = build_hub_and_spokes(3)
    assert dag.parents[3] == (0, 1, 2)
    assert dag.depth == (1, 1, 1, 2)
    assert dag.subtree_size[3] == 4


def test_cycle_and_bad_ids_rejected():
    with pytest.raises(ValueError, match="cycle"):
        from_parents([[1], [0]])
    with pytest.raises(ValueError, match="own parent"):
        from_parents([[0]])
    with pytest.raises(ValueError, match="unknown parent"):
        from_parents([[], [5]])


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 25), prob=st.floats(0, 1), seed=st.integers(0, 10_000))
def test_random_dag_against_networkx(n, prob, seed):
    dag = build_random_dag(n, prob, seed)
    g = _to_nx(dag)
    assert nx.is_directed_acyclic_graph(g)
    pos = {v: i for i, v in enumerate(dag.topo_order)}
    assert all(pos[u] < pos[v] for u, v in dag.edges())
    assert len(longest_path(dag)) == nx.dag_longest_path_length(g) + 1
    assert dag.max_depth == nx.dag_longest_path_length(g) + 1
    for v in range(n):
        assert dag.subtree_size[v] == 1 + len(nx.ancestors(g, v))
    path = longest_path(dag)
    assert all(u in dag.parents[v] for u, v in zip(path, path[1:]))


@pytest.mark.parametrize("direction", ["top_down", "bottom_up"])
def test_random_tree_shape(direction):
    dag = build_random_tree(50, direction, seed=3)
    g = _to_nx(dag)
    assert nx.is_tree(g.to_undirected())
    if direction == "top_down":
        assert dag.roots() == [0]
        assert all(len(p) <= 1 for p in dag.parents)
    else:
        assert len(dag.children()[0]) == 0  # tree root aggregates, nobody downstream
        assert dag.subtree_size[0] == 50


def test_tree_generation_is_seeded():
    assert build_random_tree(30, seed=4) == build_random_tree(30, seed=4)
    assert build_random_tree(30, seed=4).parents != build_random_tree(30, seed=5).parents


def test_assignment_validation_and_generators():
    with pytest.raises(ValueError):
        FeatureAssignment(3, ((0, 3),))
    a = cyclic_assignment(7, 3)
    assert a.sets == ((0,), (1,), (2,), (0,), (1,), (2,), (0,))
    b = best_case_assignment(build_chain(3), 5)
    assert b.sets == ((4,), (3,), (2,))
    with pytest.raises(ValueError):
        random_feature_assignment(build_chain(3), 4, 0.0)


def test_random_assignment_rate():
    dag = build_chain(2000)
    a = random_feature_assignment(dag, 10, 0.3, seed=1)
    rate = sum(len(s) for s in a.sets) / 20000
    assert abs(rate - 0.3) < 4 * math.sqrt(0.3 * 0.7 / 20000)


def _brute_covered(sets, d, window, stride):
    return all(set().union(*sets[s:s + window]) == set(range(d))
               for s in range(0, len(sets) - window + 1, stride))


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 20), d=st.integers(1, 5), p=st.floats(0.05, 1.0),
       seed=st.integers(0, 1000), data=st.data())
def test_coverage_check_against_brute_force(n, d, p, seed, data):
    dag = build_chain(n)
    a = random_feature_assignment(dag, d, p, seed)
    window = data.draw(st.integers(1, n))
    stride = data.draw(st.sampled_from([1, window]))
    rep = coverage_window_check(a, list(range(n)), window, stride)
    assert rep.covered == _brute_covered(a.sets, d, window, stride)
    m = minimal_covering_window(a, list(range(n)))
    if m is None:
        assert not _brute_covered(a.sets, d, n, 1)
    else:
        assert _brute_covered(a.sets, d, m, 1)
        assert m == 1 or not _brute_covered(a.sets, d, m - 1, 1)


def test_required_window_by_hand():
    # (ln(50*11/10) + ln 10) / ln 2 = 9.10 <= 10, while M=9 needs 9.25
    assert required_window(50, 11, 0.5, 0.1) == 10
    assert required_window(50, 11, 1.0, 0.1) == 1


def test_required_window_disjoint_blocks_meet_confidence():
    m = required_window(50, 11, 0.5, 0.1)
    hits = 0
    for seed in range(200):
        a = random_feature_assignment(build_chain(50), 11, 0.5, seed)
        hits += coverage_window_check(a, range(50), m, stride=m).covered
    assert hits / 200 >= 0.9


def test_graph_json_round_trip():
    dag = build_random_tree(12, "bottom_up", seed=2)
    a = random_feature_assignment(dag, 4, 0.5, seed=9)
    dag2, a2 = load_graph(dump_graph(dag, a))
    assert dag2.parents == dag.parents and a2.sets == a.sets and a2.d == 4
