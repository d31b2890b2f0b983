"""Additive trees: neighbor-joining with non-negative least-squares branch lengths."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import nnls


@dataclass
class AdditiveTree:
    """Unrooted tree; nodes 0..n-1 are the leaves, in ``labels`` order."""

    labels: list[str]
    edges: list[tuple[int, int, float]] = field(default_factory=list)
    residual: float = 0.0  # RMSE of the path metric against the fitted matrix

    @property
    def num_leaves(self) -> int:
        return len(self.labels)

    @property
    def num_nodes(self) -> int:
        return 1 + max(max(u, v) for u, v, _ in self.edges) if self.edges else self.num_leaves

    def adjacency(self) -> dict[int, list[tuple[int, int]]]:
        """node -> [(neighbor, edge index)]."""
        adj: dict[int, list[tuple[int, int]]] = defaultdict(list)
        for k, (u, v, _) in enumerate(self.edges):
            adj[u].append((v, k))
            adj[v].append((u, k))
        return adj

    def _paths_from(self, src: int) -> dict[int, list[int]]:
        """Edge indices on the path from ``src`` to every node."""
        adj = self.adjacency()
        paths = {src: []}
        stack = [src]
        while stack:
            u = stack.pop()
            for v, k in adj[u]:
                if v not in paths:
                    paths[v] = paths[u] + [k]
                    stack.append(v)
        return paths

    def path_matrix(self) -> np.ndarray:
        """Leaf-pair x edge incidence: row (i, j) marks the edges on the i-j path."""
        n = self.num_leaves
        rows = []
        for i in range(n):
            paths = self._paths_from(i)
            for j in range(i + 1, n):
                r = np.zeros(len(self.edges))
                r[paths[j]] = 1.0
                rows.append(r)
        return np.array(rows).reshape(-1, len(self.edges))

    def distances(self) -> np.ndarray:
        n = self.num_leaves
        lengths = np.array([w for _, _, w in self.edges])
        d = np.zeros((n, n))
        d[np.triu_indices(n, 1)] = self.path_matrix() @ lengths
        return d + d.T

    def terminal_lengths(self) -> dict[str, float]:
        out = {}
        for u, v, w in self.edges:
            for leaf in (u, v):
                if leaf < self.num_leaves:
                    out[self.labels[leaf]] = w
        return out

    def longest_terminal(self) -> str:
        lengths = self.terminal_lengths()
        return max(self.labels, key=lambda lab: lengths[lab])

    def bipartitions(self) -> set[frozenset[str]]:
        """Non-trivial splits, each written as the side without leaf 0."""
        n = self.num_leaves
        adj = self.adjacency()
        splits = set()
        for u, v, _ in self.edges:
            # leaves reachable from v without crossing the (u, v) edge
            seen, stack, side = {u, v}, [v], set()
            while stack:
                x = stack.pop()
                if x < n:
                    side.add(x)
                for y, _ in adj[x]:
                    if y not in seen:
                        seen.add(y)
                        stack.append(y)
            if 0 in side:
                side = set(range(n)) - side
            if 1 < len(side) < n - 1:
                splits.add(frozenset(self.labels[i] for i in side))
        return splits

    def same_topology(self, other: "AdditiveTree") -> bool:
        return set(self.labels) == set(other.labels) and self.bipartitions() == other.bipartitions()

    def newick(self, digits: int = 5) -> str:
        n = self.num_leaves
        adj = self.adjacency()
        root = next(u for u in range(n, self.num_nodes)) if self.num_nodes > n else 0
        weight = {k: w for k, (_, _, w) in enumerate(self.edges)}

        def render(node: int, parent: int) -> str:
            kids = [(v, k) for v, k in adj[node] if v != parent]
            text = _quote(self.labels[node]) if node < n else ""
            if kids:
                inner = ",".join(f"{render(v, node)}:{weight[k]:.{digits}f}" for v, k in kids)
                text = f"({inner}){text}"
            return text

        return render(root, -1) + ";"


def _quote(label: str) -> str:
    if any(c in label for c in " ();:,'[]"):
        return "'" + label.replace("'", "''") + "'"
    return label


def fit_additive_tree(d, labels: Sequence[str] | None = None, refit: bool = True) -> AdditiveTree:
    """Neighbor-joining topology, then branch lengths by non-negative least squares.

    With ``refit=False`` the neighbor-joining lengths are kept, negative
    ones clamped to zero.  The residual is the RMSE between the tree's
    path metric and ``d`` over leaf pairs.
    """
    d = np.asarray(d, dtype=np.float64)
    n = d.shape[0]
    if d.ndim != 2 or d.shape != (n, n):
        raise ValueError("distance matrix must be square")
    if n < 3:
        raise ValueError("an additive tree needs at least 3 leaves")
    if not np.allclose(d, d.T, rtol=0, atol=1e-12):
        raise ValueError("distance matrix must be symmetric")
    labels = list(labels) if labels is not None else [f"t{i}" for i in range(n)]
    if len(labels) != n:
        raise ValueError("one label per row required")

    dist = {(i, j): d[i, j] for i in range(n) for j in range(n)}
    active = list(range(n))
    edges: list[tuple[int, int, float]] = []
    nxt = n
    while len(active) > 3:
        r = len(active)
        total = {i: sum(dist[i, k] for k in active) for i in active}
        best, pair = np.inf, None
        for a in range(r):
            for b in range(a + 1, r):
                i, j = active[a], active[b]
                q = (r - 2) * dist[i, j] - total[i] - total[j]
                if q < best - 1e-12:
                    best, pair = q, (i, j)
        i, j = pair
        li = 0.5 * dist[i, j] + (total[i] - total[j]) / (2.0 * (r - 2))
        lj = dist[i, j] - li
        u = nxt
        nxt += 1
        edges += [(u, i, li), (u, j, lj)]
        for k in active:
            if k not in (i, j):
                dist[u, k] = dist[k, u] = 0.5 * (dist[i, k] + dist[j, k] - dist[i, j])
        dist[u, u] = 0.0
        active = [k for k in active if k not in (i, j)] + [u]
    a, b, c = active
    center = nxt
    edges += [
        (center, a, 0.5 * (dist[a, b] + dist[a, c] - dist[b, c])),
        (center, b, 0.5 * (dist[a, b] + dist[b, c] - dist[a, c])),
        (center, c, 0.5 * (dist[a, c] + dist[b, c] - dist[a, b])),
    ]
    tree = AdditiveTree(labels, [(u, v, max(w, 0.0)) for u, v, w in edges])
    target = d[np.triu_indices(n, 1)]
    if refit:
        lengths, _ = nnls(tree.path_matrix(), target)
        tree.edges = [(u, v, float(w)) for (u, v, _), w in zip(tree.edges, lengths)]
    fitted = tree.distances()[np.triu_indices(n, 1)]
    tree.residual = float(np.sqrt(np.mean((fitted - target) ** 2)))
    return tree


def random_additive_tree(n: int, rng: np.random.Generator, labels: Sequence[str] | None = None,
                         min_length: float = 0.1, max_length: float = 1.0) -> AdditiveTree:
    """Random unrooted binary tree, grown by attaching each new leaf to a random edge."""
    if n < 3:
        raise ValueError("need at least 3 leaves")
    labels = list(labels) if labels is not None else [f"t{i}" for i in range(n)]
    draw = lambda: float(rng.uniform(min_length, max_length))  # noqa: E731
    nxt = n
    center = nxt
    nxt += 1
    edges = [(center, 0, draw()), (center, 1, draw()), (center, 2, draw())]
    for leaf in range(3, n):
        k = int(rng.integers(len(edges)))
        u, v, _ = edges[k]
        mid = nxt
        nxt += 1
        edges[k] = (u, mid, draw())
        edges += [(mid, v, draw()), (mid, leaf, draw())]
    return AdditiveTree(labels, edges)
