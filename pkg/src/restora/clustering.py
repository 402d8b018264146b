"""Two-level autonomous clustering of a radial feeder.

Level one picks the cluster count that trades communication against
per-cluster computation (square-root rule). Level two partitions the
normal-topology tree bottom-up: postorder subtree sizes are computed, the
topmost subtree whose size falls in a window around the ideal size is
detached, sizes are recomputed, and the window widens whenever a full scan
detaches nothing. Tie lines never participate; residual nodes around the
root become the final cluster. The procedure is deterministic: children are
visited in ascending node-id order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from .errors import TopologyError
from .feeder import Feeder
from .graphs import RootedTree, connected_components, node_sort_key


@dataclass(frozen=True)
class Clustering:
    assignment: Mapping            # node id -> cluster id
    clusters: Mapping              # cluster id -> frozenset of node ids
    joint_lines: frozenset         # line ids crossing clusters (ties included)
    neighbor_map: Mapping          # cluster id -> frozenset of cluster ids
    parent_of: Mapping             # cluster id -> cluster id | None (root cluster)

    @property
    def cluster_ids(self):
        return sorted(self.clusters)

    def sharing_clusters(self, line) -> frozenset:
        a = self.assignment[line.from_node]
        b = self.assignment[line.to_node]
        return frozenset((a, b))


def optimal_cluster_count(n: int, lambda1: float = 1.0, lambda2: float = 1.0) -> int:
    """Integer k minimizing lambda1*k + lambda2*(n/k), clamped to [1, n].

    With equal weights this is round(sqrt(n)). Ties between the two integer
    neighbours of the continuous optimum resolve to the smaller k.
    """
    if n < 1:
        raise ValueError("node count must be >= 1")
    if lambda1 <= 0 or lambda2 <= 0:
        raise ValueError("weights must be > 0")
    k_star = math.sqrt(lambda2 * n / lambda1)
    lo = min(max(int(math.floor(k_star)), 1), n)
    hi = min(max(int(math.ceil(k_star)), 1), n)
    cost = lambda k: lambda1 * k + lambda2 * n / k
    return lo if cost(lo) <= cost(hi) else hi


def subtree_sizes(tree: RootedTree) -> dict:
    """size(v) = 1 + sum of children's sizes; size(root) = |nodes|."""
    return tree.subtree_sizes()


def bottom_up_cluster(tree: RootedTree, k: int, r: int = 0) -> dict:
    """Partition a rooted tree into roughly-equal connected clusters.

    Returns {cluster_id: frozenset(nodes)} with cluster ids assigned in
    detachment order (0, 1, ...); the residual cluster containing the root
    is numbered last. The ideal size is m = round(N/k). If a full scan
    finds no detachable subtree with size within m +/- r, r is escalated
    by one, so the loop always terminates. A detachment is skipped when it
    would strand fewer than m - r nodes at the root; the final root-side
    residue becomes its own cluster.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if r < 0:
        raise ValueError("r must be >= 0")
    n_total = len(tree.nodes)
    m = max(1, round(n_total / k))
    remaining = set(tree.nodes)
    clusters = []
    r_cur = r
    while remaining:
        if len(remaining) <= m + r_cur:
            clusters.append(frozenset(remaining))
            break
        detached = _detach_pass(tree, remaining, m, r_cur)
        if detached:
            clusters.extend(detached)
        else:
            r_cur += 1
    return {i: c for i, c in enumerate(clusters)}


def _detach_pass(tree, remaining, m, r_cur):
    """Detach qualifying subtrees until none qualify; mutates `remaining`."""
    out = []
    while True:
        if len(remaining) <= m + r_cur:
            return out
        sizes, order = _live_sizes(tree, remaining)
        pick = None
        qualifying = {v for v in order if m - r_cur <= sizes[v] <= m + r_cur}
        if not qualifying:
            return out
        # Topmost qualifying nodes only (a candidate with a qualifying
        # ancestor is subsumed by that ancestor's subtree), and never
        # strand a root residue smaller than the window floor.
        for v in order:
            if v not in qualifying:
                continue
            anc = tree.parent[v]
            while anc is not None and anc not in qualifying:
                anc = tree.parent[anc]
            if anc is None:
                if len(remaining) - sizes[v] < max(m - r_cur, 1):
                    continue
                pick = v
                break
        if pick is None:
            return out
        subtree = _collect_subtree(tree, remaining, pick)
        remaining.difference_update(subtree)
        out.append(frozenset(subtree))


def _live_sizes(tree, remaining):
    """Subtree sizes restricted to non-detached nodes, in postorder."""
    sizes = {}
    order = [v for v in tree.postorder() if v in remaining]
    for v in order:
        sizes[v] = 1 + sum(sizes[c] for c in tree.children[v] if c in remaining)
    return sizes, order


def _collect_subtree(tree, remaining, top):
    out = []
    stack = [top]
    while stack:
        v = stack.pop()
        out.append(v)
        stack.extend(c for c in tree.children[v] if c in remaining)
    return out


def derive_adjacency(clusters: Mapping, feeder: Feeder) -> Clustering:
    """Fill joint lines, neighbor map and the cluster parent relation.

    `clusters` maps cluster id -> node set covering every feeder node; each
    cluster must induce a connected subgraph of the normal topology.
    """
    assignment = {}
    for cid, nodes in clusters.items():
        for v in nodes:
            if v in assignment:
                raise TopologyError(f"node {v!r} assigned to two clusters")
            assignment[v] = cid
    unassigned = set(feeder.nodes) - set(assignment)
    if unassigned:
        raise TopologyError(f"nodes not clustered: {sorted(unassigned, key=node_sort_key)}")

    closed = feeder.normal_closed_lines()
    for cid, nodes in clusters.items():
        edges = [(ln.id, ln.from_node, ln.to_node) for ln in closed
                 if ln.from_node in nodes and ln.to_node in nodes]
        if len(connected_components(nodes, edges)) != 1:
            raise TopologyError(f"cluster {cid} is disconnected in the normal topology")

    joint = frozenset(
        ln.id for ln in feeder.lines
        if assignment[ln.from_node] != assignment[ln.to_node]
    )
    neighbor_map = {cid: set() for cid in clusters}
    for ln in feeder.lines:
        a, b = assignment[ln.from_node], assignment[ln.to_node]
        if a != b:
            neighbor_map[a].add(b)
            neighbor_map[b].add(a)

    tree = feeder.normal_tree()
    parent_of = {}
    for cid, nodes in clusters.items():
        top = min(nodes, key=lambda v: (tree.depth(v),) + node_sort_key(v))
        p = tree.parent[top]
        parent_of[cid] = None if p is None else assignment[p]

    return Clustering(
        assignment=dict(assignment),
        clusters={cid: frozenset(ns) for cid, ns in clusters.items()},
        joint_lines=joint,
        neighbor_map={cid: frozenset(ns) for cid, ns in neighbor_map.items()},
        parent_of=parent_of,
    )


def cluster_feeder(feeder: Feeder, k: int | None = None, r: int = 0) -> Clustering:
    """End-to-end clustering of a feeder's normal topology."""
    tree = feeder.normal_tree()
    if k is None:
        k = optimal_cluster_count(len(tree.nodes))
    parts = bottom_up_cluster(tree, k, r)
    return derive_adjacency(parts, feeder)


def single_cluster(feeder: Feeder) -> Clustering:
    """The trivial clustering: the whole feeder as one agent."""
    return derive_adjacency({0: frozenset(feeder.nodes)}, feeder)
