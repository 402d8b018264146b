import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from restora.clustering import (
    bottom_up_cluster,
    cluster_feeder,
    derive_adjacency,
    optimal_cluster_count,
    single_cluster,
    subtree_sizes,
)
from restora.errors import TopologyError
from restora.graphs import RootedTree


def test_count_paper_values():
    assert optimal_cluster_count(123) == 11
    assert optimal_cluster_count(2522) == 50


def test_count_trivial():
    assert optimal_cluster_count(1) == 1
    assert optimal_cluster_count(6) == 2


def test_count_perfect_squares():
    for s in (2, 5, 9, 17):
        assert optimal_cluster_count(s * s) == s


def test_count_rejects_bad_input():
    with pytest.raises(ValueError):
        optimal_cluster_count(0)
    with pytest.raises(ValueError):
        optimal_cluster_count(10, lambda1=0.0)


@given(st.integers(min_value=1, max_value=100000))
def test_count_is_integer_argmin(n):
    k = optimal_cluster_count(n)
    cost = lambda kk: kk + n / kk
    assert 1 <= k <= n
    for kk in (k - 1, k + 1):
        if 1 <= kk <= n:
            assert cost(k) <= cost(kk) + 1e-9


def test_subtree_sizes_f6(f6):
    feeder, _ = f6
    tree = feeder.normal_tree()
    sizes = subtree_sizes(tree)
    assert sizes["1"] == 6
    assert sizes["2"] == 4      # children 3, 4; 4 has child 5
    assert sizes["3"] == 1
    assert sizes["6"] == 1


def test_subtree_sizes_rejects_cycle():
    edges = [("a", "1", "2"), ("b", "2", "3"), ("c", "3", "1")]
    with pytest.raises(TopologyError, match="cycle"):
        RootedTree(["1", "2", "3"], edges, "1")


def test_bottom_up_f6(f6):
    feeder, _ = f6
    tree = feeder.normal_tree()
    parts = bottom_up_cluster(tree, k=2, r=1)
    sizes = sorted(len(p) for p in parts.values())
    assert len(parts) == 2
    assert all(2 <= s <= 4 for s in sizes)   # 3 +/- 1
    assert frozenset({"2", "3", "4", "5"}) in parts.values()


def test_bottom_up_k1(f13):
    feeder, _ = f13
    tree = feeder.normal_tree()
    parts = bottom_up_cluster(tree, k=1)
    assert len(parts) == 1
    assert parts[0] == frozenset(feeder.nodes)


def test_bottom_up_path9():
    nodes = [str(i) for i in range(1, 10)]
    edges = [(f"e{i}", str(i), str(i + 1)) for i in range(1, 9)]
    tree = RootedTree(nodes, edges, "1")
    parts = bottom_up_cluster(tree, k=3, r=0)
    got = sorted(sorted(int(v) for v in p) for p in parts.values())
    assert got == [[1, 2, 3], [4, 5, 6], [7, 8, 9]]


def test_bottom_up_f13(f13):
    feeder, _ = f13
    parts = bottom_up_cluster(feeder.normal_tree(), k=4, r=0)
    assert len(parts) == 4
    sizes = sorted(len(p) for p in parts.values())
    assert sizes == [3, 3, 3, 4]


def test_adjacency_f6_split(f6):
    feeder, _ = f6
    cl = cluster_feeder(feeder, k=2, r=1)
    assert cl.joint_lines == {"L12"}
    a = cl.assignment["2"]
    b = cl.assignment["1"]
    assert a != b
    assert cl.neighbor_map[a] == {b}
    assert cl.neighbor_map[b] == {a}
    # root cluster holds the substation and has no parent
    assert cl.parent_of[b] is None
    assert cl.parent_of[a] == b


def test_adjacency_manual_split_at_L24(f6):
    feeder, _ = f6
    cl = derive_adjacency({0: {"1", "2", "3", "6"}, 1: {"4", "5"}}, feeder)
    assert cl.joint_lines == {"L24", "T35"}
    assert cl.neighbor_map[0] == {1}
    assert cl.parent_of[1] == 0


def test_adjacency_single_cluster(f6):
    feeder, _ = f6
    cl = single_cluster(feeder)
    assert cl.joint_lines == frozenset()
    assert cl.parent_of[0] is None


def test_adjacency_rejects_disconnected(f6):
    feeder, _ = f6
    with pytest.raises(TopologyError, match="disconnected"):
        derive_adjacency({0: {"1", "5"}, 1: {"2", "3", "4", "6"}}, feeder)


def test_ieee123_tree_shape(ieee123_tree):
    assert len(ieee123_tree.nodes) == 123
    sizes = subtree_sizes(ieee123_tree)
    assert sizes[ieee123_tree.root] == 123


def test_ieee123_cluster_counts(ieee123_tree):
    parts = bottom_up_cluster(ieee123_tree, k=11, r=0)
    assert len(parts) == 11
    root_ideal = math.sqrt(123)
    for nodes in parts.values():
        assert abs(len(nodes) - root_ideal) <= 4.0


@st.composite
def random_trees(draw):
    n = draw(st.integers(min_value=2, max_value=500))
    # random parent pointers give a uniform-ish labelled tree shape
    parents = [draw(st.integers(min_value=0, max_value=i - 1)) for i in range(1, n)]
    nodes = [str(i) for i in range(n)]
    edges = [(f"e{i}", str(p), str(i)) for i, p in enumerate(parents, start=1)]
    return RootedTree(nodes, edges, "0")


@settings(max_examples=40, deadline=None)
@given(random_trees())
def test_partition_properties_random(tree):
    n = len(tree.nodes)
    k = optimal_cluster_count(n)
    parts = bottom_up_cluster(tree, k, r=0)
    all_nodes = [v for p in parts.values() for v in p]
    assert len(all_nodes) == n
    assert len(set(all_nodes)) == n
    # connectivity of every part within the tree
    for nodes in parts.values():
        inside = set(nodes)
        roots = [v for v in inside if tree.parent[v] not in inside]
        assert len(roots) == 1


def test_count_target_on_fixture_corpus(f6, f13, ieee123_tree):
    # soft target: produced cluster count stays within k +/- 2 on the corpus
    # (star-like topologies may legitimately fall outside; Remark-1 latitude)
    corpus = [f6[0].normal_tree(), f13[0].normal_tree(), ieee123_tree]
    for tree in corpus:
        k = optimal_cluster_count(len(tree.nodes))
        parts = bottom_up_cluster(tree, k, r=0)
        assert k - 2 <= len(parts) <= k + 2


def test_determinism(ieee123_tree):
    a = bottom_up_cluster(ieee123_tree, 11, 0)
    b = bottom_up_cluster(ieee123_tree, 11, 0)
    assert a == b
