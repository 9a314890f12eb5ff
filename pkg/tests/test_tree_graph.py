import time

import pytest
from hypothesis import given
from hypothesis import strategies as st

from treemh.tree_graph import (
    InvalidGraphError,
    InvalidParameterError,
    InvalidVertexError,
    TreeGraph,
    build_symmetric_tree,
    orient_from_root,
    path_between,
    read_graph_file,
    reoriented_edge_difference,
    symmetric_tree_size,
    topological_levels,
    tree_from_pruefer,
    write_graph_file,
)


def count_by_levels(L, N):
    # level sizes: N, N(N-1), N(N-1)^2, ...
    total, width = 1, 1
    for level in range(L):
        width = width * (N if level == 0 else N - 1)
        total += width
    return total


@st.composite
def trees(draw, max_n=25):
    n = draw(st.integers(2, max_n))
    seq = draw(st.lists(st.integers(1, n), min_size=n - 2, max_size=n - 2))
    return tree_from_pruefer(seq)


@pytest.mark.parametrize("L,N,n", [(2, 4, 17), (3, 5, 106), (1, 1, 2)])
def test_symmetric_tree_sizes(L, N, n):
    g = build_symmetric_tree(L, N)
    assert g.n == n
    assert len(g.edges) == n - 1
    assert symmetric_tree_size(L, N) == n


def test_g24_degree_profile():
    g = build_symmetric_tree(2, 4)
    degrees = sorted(len(g.neighbors[v]) for v in g.vertices)
    assert degrees == [1] * 12 + [4] * 5
    assert len(g.neighbors[1]) == 4


@given(st.integers(1, 4), st.integers(1, 5))
def test_size_formula_matches_level_count(L, N):
    g = build_symmetric_tree(L, N)
    assert g.n == count_by_levels(L, N) == symmetric_tree_size(L, N)


@pytest.mark.parametrize("L,N", [(0, 3), (2, 0), (1.5, 2), (-1, 2)])
def test_symmetric_tree_rejects_bad_parameters(L, N):
    with pytest.raises(InvalidParameterError):
        build_symmetric_tree(L, N)


def test_build_is_fast():
    t0 = time.perf_counter()
    for _ in range(10):
        build_symmetric_tree(3, 5)
    assert (time.perf_counter() - t0) / 10 < 1e-3


@pytest.mark.parametrize("n,edges", [
    (1, []),
    (3, [(1, 2)]),
    (3, [(1, 2), (2, 1)]),
    (4, [(1, 2), (2, 3), (3, 1)]),
    (3, [(1, 1), (2, 3)]),
    (3, [(1, 2), (2, 4)]),
])
def test_invalid_graphs_rejected(n, edges):
    with pytest.raises(InvalidGraphError):
        TreeGraph.from_edges(n, edges)


def test_disconnected_graph_rejected():
    # right number of edges but a cycle leaves vertex 4 isolated
    with pytest.raises(InvalidGraphError):
        TreeGraph.from_edges(4, [(1, 2), (2, 3), (1, 3)])


def test_orient_rejects_unknown_vertex():
    g = build_symmetric_tree(1, 2)
    with pytest.raises(InvalidVertexError):
        orient_from_root(g, 0)
    with pytest.raises(InvalidVertexError):
        orient_from_root(g, g.n + 1)


@given(trees(), st.data())
def test_orientation_properties(g, data):
    k = data.draw(st.integers(1, g.n))
    t = orient_from_root(g, k)
    assert t.parent[k] == 0
    assert len(t.directed_edges) == g.n - 1
    assert {frozenset(e) for e in t.directed_edges} == {frozenset(e) for e in g.edges}
    levels = topological_levels(t)
    assert levels[0] == {k}
    assert sorted(v for lv in levels for v in lv) == list(g.vertices)
    seen = set()
    for i, j in t.directed_edges:
        assert i == k or i in seen
        seen.add(j)
        assert t.depth[j] == t.depth[i] + 1


@given(trees(), st.data())
def test_paths_and_reorientation(g, data):
    a = data.draw(st.integers(1, g.n))
    b = data.draw(st.integers(1, g.n))
    path = path_between(g, a, b)
    assert path[0] == a and path[-1] == b
    assert len(set(path)) == len(path)
    for x, y in zip(path, path[1:]):
        assert y in g.neighbors[x]
    flipped = set(g.oriented(a).directed_edges) - set(g.oriented(b).directed_edges)
    assert reoriented_edge_difference(g, a, b) == flipped
    assert len(flipped) == len(path) - 1


def test_oriented_is_memoized():
    g = build_symmetric_tree(2, 3)
    assert g.oriented(3) is g.oriented(3)


def test_graph_file_round_trip(tmp_path):
    g = build_symmetric_tree(2, 3)
    path = tmp_path / "g.txt"
    write_graph_file(g, path)
    assert read_graph_file(path) == g


@pytest.mark.parametrize("text", ["", "3\n1 2\n2", "x\n1 2", "3\n1 2\n1 2\n"])
def test_bad_graph_files(tmp_path, text):
    path = tmp_path / "g.txt"
    path.write_text(text)
    with pytest.raises(InvalidGraphError):
        read_graph_file(path)
