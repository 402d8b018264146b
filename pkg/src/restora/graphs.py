"""Small undirected-graph helpers used by clustering, the oracle and the plan checker.

Nodes are opaque ids (strings in practice). Edges carry an id so parallel
switch/tie representations stay distinguishable.
"""

from __future__ import annotations

from collections import deque

from .errors import TopologyError


def node_sort_key(node_id):
    """Ascending-id order: numeric ids numerically, the rest lexicographically."""
    s = str(node_id)
    return (0, int(s), "") if s.isdigit() else (1, 0, s)


def build_adjacency(edges):
    """edge list of (edge_id, a, b) -> {node: [(edge_id, other), ...]} (sorted)."""
    adj = {}
    for eid, a, b in edges:
        adj.setdefault(a, []).append((eid, b))
        adj.setdefault(b, []).append((eid, a))
    for nbrs in adj.values():
        nbrs.sort(key=lambda t: (node_sort_key(t[1]), t[0]))
    return adj


def connected_components(nodes, edges):
    """Components as a list of node sets; singleton nodes included."""
    adj = build_adjacency(edges)
    seen = set()
    comps = []
    for start in sorted(nodes, key=node_sort_key):
        if start in seen:
            continue
        comp = {start}
        seen.add(start)
        queue = deque([start])
        while queue:
            v = queue.popleft()
            for _, w in adj.get(v, ()):
                if w not in seen:
                    seen.add(w)
                    comp.add(w)
                    queue.append(w)
        comps.append(comp)
    return comps


def is_connected(nodes, edges):
    if not nodes:
        return True
    return len(connected_components(nodes, edges)) == 1


class RootedTree:
    """A tree rooted at `root` with deterministic child order.

    Raises TopologyError if the edge set has a cycle or does not reach
    every node.
    """

    def __init__(self, nodes, edges, root):
        nodes = set(nodes)
        if root not in nodes:
            raise TopologyError(f"root {root!r} not among nodes")
        adj = build_adjacency(edges)
        parent = {root: None}
        order = [root]
        queue = deque([root])
        edge_seen = set()
        while queue:
            v = queue.popleft()
            for eid, w in adj.get(v, ()):
                if eid in edge_seen:
                    continue
                edge_seen.add(eid)
                if w in parent:
                    raise TopologyError(f"cycle detected through edge {eid!r}")
                parent[w] = v
                order.append(w)
                queue.append(w)
        if set(parent) != nodes:
            missing = sorted(nodes - set(parent), key=node_sort_key)
            raise TopologyError(f"nodes unreachable from root: {missing}")
        children = {v: [] for v in nodes}
        for v, p in parent.items():
            if p is not None:
                children[p].append(v)
        for kids in children.values():
            kids.sort(key=node_sort_key)
        self.root = root
        self.parent = parent
        self.children = children
        self.nodes = nodes

    def postorder(self):
        """Children before parents; siblings in ascending node-id order."""
        out = []
        stack = [(self.root, False)]
        while stack:
            v, expanded = stack.pop()
            if expanded:
                out.append(v)
            else:
                stack.append((v, True))
                for c in reversed(self.children[v]):
                    stack.append((c, False))
        return out

    def subtree_sizes(self):
        sizes = {}
        for v in self.postorder():
            sizes[v] = 1 + sum(sizes[c] for c in self.children[v])
        return sizes

    def depth(self, v):
        d = 0
        while self.parent[v] is not None:
            v = self.parent[v]
            d += 1
        return d
