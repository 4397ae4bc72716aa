# -*- coding: utf-8 -*-
"""強連結成分・Morse 集合・Morse グラフのテスト"""

import numpy as np
import pytest

from dynamics.enclosure import Fixed, build_map
from analysis.morse import Digraph, condense, decompose, morse_graph, morse_sets, spurious_census, to_dot
from analysis.oracles import adjacency, brute_force_morse_graph, brute_force_morse_sets


def sets_of(md):
    return [s.tolist() for s in md.sets]


def test_self_loops_and_chain():
    g = Digraph.from_edges(4, [(0, 0), (0, 1), (1, 2), (2, 2), (3, 0)])
    md = decompose(g)
    assert sets_of(md) == [[0], [2]]
    assert md.edges == [(0, 1)]
    assert md.reachable(0, 1) and not md.reachable(1, 0)


def test_cycle_is_one_morse_set():
    g = Digraph.from_edges(4, [(0, 1), (1, 2), (2, 0), (2, 3), (3, 3)])
    md = decompose(g)
    assert sets_of(md) == [[0, 1, 2], [3]]
    assert md.edges == [(0, 1)]
    assert md.set_of(1) == 0 and md.set_of(3) == 1


def test_singleton_without_self_loop_is_transient():
    g = Digraph.from_edges(3, [(0, 1), (1, 2)])
    assert decompose(g).sets == []


def test_graph_is_transitively_reduced():
    edges = [(0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2)]
    md = decompose(Digraph.from_edges(3, edges))
    assert md.edges == [(0, 1), (1, 2)]
    assert sorted(md.reachability_edges()) == [(0, 1), (0, 2), (1, 2)]


def test_failed_vertex_reaches_everything():
    g = Digraph.from_edges(4, [(1, 1), (3, 3)], failed=[0])
    md = decompose(g)
    assert sets_of(md) == [[0], [1], [3]]
    assert md.edges == [(0, 1), (0, 2)]


def test_long_chain_does_not_recurse():
    n = 50_000
    edges = [(i, i + 1) for i in range(n - 1)] + [(n - 1, n - 1), (0, 0)]
    md = decompose(Digraph.from_edges(n, edges))
    assert sets_of(md) == [[0], [n - 1]]
    assert md.edges == [(0, 1)]


@pytest.mark.parametrize("seed", range(8))
def test_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = 12
    adj = rng.random((n, n)) < 0.15
    edges = [tuple(e) for e in np.argwhere(adj).tolist()]
    md = decompose(Digraph.from_edges(n, edges))
    expected = brute_force_morse_sets(adj)
    assert sets_of(md) == expected
    assert md.edges == brute_force_morse_graph(adj, expected)


def test_oracle_adjacency_round_trip():
    adj = adjacency(3, [(0, 1), (2, 2)])
    assert adj.tolist() == [[False, True, False], [False, False, False], [False, False, True]]


def test_morse_sets_and_graph_helpers():
    g = Digraph.from_edges(3, [(0, 0), (0, 2), (2, 2)])
    sets = morse_sets(g)
    assert morse_graph(g, sets) == [(0, 1)]
    with pytest.raises(ValueError):
        morse_graph(g, sets[:1])


def test_graph_skipped_above_limit():
    g = Digraph.from_edges(3, [(0, 0), (1, 1), (2, 2)])
    md = decompose(g, max_graph_sets=2)
    assert md.graph_skipped and md.edges == []
    with pytest.raises(ValueError):
        md.reachable(0, 1)
    assert "graph skipped" in to_dot(md)


def test_census():
    census = spurious_census([])
    assert census == {"count": 0, "singleton_fraction": 0.0, "histogram": {}}
    md = decompose(Digraph.from_edges(4, [(0, 0), (1, 2), (2, 1), (3, 3)]))
    census = md.census()
    assert census["count"] == 3
    assert census["histogram"] == {1: 2, 2: 1}
    assert census["singleton_fraction"] == pytest.approx(2 / 3)


def test_dot_output():
    md = decompose(Digraph.from_edges(2, [(0, 0), (0, 1), (1, 1)]))
    dot = to_dot(md, name="demo")
    assert dot.startswith("digraph demo {")
    assert "  0 -> 1;" in dot
    assert "N1\\n1 cells" in dot


def test_condensation_order_is_reverse_topological():
    cond = condense(Digraph.from_edges(3, [(0, 1), (1, 2)]))
    assert cond.components[0] == [2]


def test_saddle_map_has_origin_set(saddle, small_grid):
    fmap = build_map(saddle, small_grid, Fixed(0.1))
    md = decompose(fmap)
    center = small_grid.linear_index((4, 4))
    p = md.set_of(center)
    assert p is not None
    assert md.grid == small_grid
    assert md.failed_in_sets == [0] * len(md.sets)
