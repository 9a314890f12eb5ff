"""Undirected trees, their rooted orientations and path queries.

Vertices are labelled ``1..n``.  A :class:`TreeGraph` is validated once at
construction; everything downstream assumes a valid tree.
"""
from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class InvalidParameterError(ValueError):
    pass


class InvalidVertexError(ValueError):
    pass


class InvalidGraphError(ValueError):
    pass


def _norm(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class TreeGraph:
    n: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        if self.n <= 1:
            raise InvalidGraphError(f"a tree needs n > 1 vertices, got n={self.n}")
        norm = set()
        for i, j in self.edges:
            if i == j:
                raise InvalidGraphError(f"self-loop at vertex {i}")
            for v in (i, j):
                if not 1 <= v <= self.n:
                    raise InvalidGraphError(f"edge ({i}, {j}) uses label outside 1..{self.n}")
            norm.add(_norm(i, j))
        if len(norm) != self.n - 1:
            raise InvalidGraphError(f"expected {self.n - 1} edges, got {len(norm)}")
        object.__setattr__(self, "edges", frozenset(norm))
        seen = {1}
        stack = [1]
        while stack:
            v = stack.pop()
            for w in self.neighbors[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        if len(seen) != self.n:
            raise InvalidGraphError("graph is not connected")

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence[int]]) -> "TreeGraph":
        return cls(n, frozenset(_norm(int(i), int(j)) for i, j in edges))

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        """``neighbors[v]`` sorted ascending; index 0 is unused."""
        adj: list[list[int]] = [[] for _ in range(self.n + 1)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return tuple(tuple(sorted(a)) for a in adj)

    @property
    def vertices(self) -> range:
        return range(1, self.n + 1)

    def check_vertex(self, v: int) -> None:
        if not (isinstance(v, (int, np.integer)) and 1 <= v <= self.n):
            raise InvalidVertexError(f"vertex {v!r} not in 1..{self.n}")

    @cached_property
    def _orientations(self) -> dict[int, "OrientedTree"]:
        return {}

    def oriented(self, k: int) -> "OrientedTree":
        """Memoized :func:`orient_from_root`."""
        t = self._orientations.get(k)
        if t is None:
            t = self._orientations[k] = orient_from_root(self, k)
        return t


@dataclass(frozen=True)
class OrientedTree:
    """A tree with every edge directed away from ``root``.

    ``parent[v]`` is 0 for the root.  ``directed_edges`` are listed level by
    level (parents before children), which is a valid sampling order.
    """

    graph: TreeGraph
    root: int
    parent: tuple[int, ...]
    levels: tuple[tuple[int, ...], ...]
    directed_edges: tuple[tuple[int, int], ...]

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        ch: list[list[int]] = [[] for _ in range(self.graph.n + 1)]
        for i, j in self.directed_edges:
            ch[i].append(j)
        return tuple(tuple(c) for c in ch)

    @cached_property
    def depth(self) -> tuple[int, ...]:
        d = [0] * (self.graph.n + 1)
        for level, members in enumerate(self.levels):
            for v in members:
                d[v] = level
        return tuple(d)


def orient_from_root(g: TreeGraph, k: int) -> OrientedTree:
    g.check_vertex(k)
    parent = [0] * (g.n + 1)
    levels: list[tuple[int, ...]] = [(k,)]
    edges: list[tuple[int, int]] = []
    seen = [False] * (g.n + 1)
    seen[k] = True
    frontier = [k]
    while frontier:
        nxt = []
        for i in frontier:
            for j in g.neighbors[i]:
                if not seen[j]:
                    seen[j] = True
                    parent[j] = i
                    nxt.append(j)
        nxt.sort()
        for j in nxt:
            edges.append((parent[j], j))
        if nxt:
            levels.append(tuple(nxt))
        frontier = nxt
    return OrientedTree(g, k, tuple(parent), tuple(levels), tuple(edges))


def topological_levels(t: OrientedTree) -> list[frozenset[int]]:
    return [frozenset(level) for level in t.levels]


def path_between(g: TreeGraph, a: int, b: int) -> tuple[int, ...]:
    """The unique simple path ``a = k_0, ..., k_m = b``."""
    g.check_vertex(a)
    g.check_vertex(b)
    if a == b:
        return (a,)
    parent = {a: 0}
    queue = deque([a])
    while queue:
        v = queue.popleft()
        if v == b:
            break
        for w in g.neighbors[v]:
            if w not in parent:
                parent[w] = v
                queue.append(w)
    path = [b]
    while path[-1] != a:
        path.append(parent[path[-1]])
    return tuple(reversed(path))


def reoriented_edge_difference(g: TreeGraph, k: int, k_new: int) -> frozenset[tuple[int, int]]:
    """Directed edges of the ``k`` orientation that flip when re-rooting at ``k_new``."""
    path = path_between(g, k, k_new)
    return frozenset(zip(path[:-1], path[1:]))


def build_symmetric_tree(L: int, N: int) -> TreeGraph:
    """The symmetric tree with a centre vertex of degree ``N`` and ``L`` levels.

    The centre is vertex 1; deeper vertices are labelled breadth-first.  Every
    non-leaf vertex has degree ``N``.
    """
    if not isinstance(L, int) or not isinstance(N, int) or L < 1 or N < 1:
        raise InvalidParameterError(f"need integers L >= 1 and N >= 1, got L={L!r}, N={N!r}")
    edges = []
    frontier = [1]
    next_label = 2
    for level in range(1, L + 1):
        fan = N if level == 1 else N - 1
        nxt = []
        for v in frontier:
            for _ in range(fan):
                edges.append((v, next_label))
                nxt.append(next_label)
                next_label += 1
        frontier = nxt
        if not frontier:
            break
    return TreeGraph.from_edges(next_label - 1, edges)


def symmetric_tree_size(L: int, N: int) -> int:
    return 1 + N * sum((N - 1) ** l for l in range(L))


def tree_from_pruefer(seq: Sequence[int]) -> TreeGraph:
    """Decode a Prüfer sequence over labels ``1..len(seq)+2``."""
    n = len(seq) + 2
    degree = [1] * (n + 1)
    for v in seq:
        if not 1 <= v <= n:
            raise InvalidGraphError(f"Prüfer label {v} outside 1..{n}")
        degree[v] += 1
    leaves = [v for v in range(1, n + 1) if degree[v] == 1]
    heapq.heapify(leaves)
    edges = []
    for v in seq:
        leaf = heapq.heappop(leaves)
        edges.append((leaf, v))
        degree[v] -= 1
        if degree[v] == 1:
            heapq.heappush(leaves, v)
    edges.append((heapq.heappop(leaves), heapq.heappop(leaves)))
    return TreeGraph.from_edges(n, edges)


def read_graph_file(path: str | Path) -> TreeGraph:
    """Plain-text format: first token ``n``, then one ``i j`` pair per edge."""
    tokens = Path(path).read_text().split()
    if not tokens:
        raise InvalidGraphError(f"{path}: empty graph file")
    try:
        values = [int(t) for t in tokens]
    except ValueError as exc:
        raise InvalidGraphError(f"{path}: non-integer token") from exc
    n, rest = values[0], values[1:]
    if len(rest) % 2:
        raise InvalidGraphError(f"{path}: odd number of edge labels")
    return TreeGraph.from_edges(n, zip(rest[0::2], rest[1::2]))


def write_graph_file(g: TreeGraph, path: str | Path) -> None:
    lines = [str(g.n)] + [f"{i} {j}" for i, j in sorted(g.edges)]
    Path(path).write_text("\n".join(lines) + "\n")
