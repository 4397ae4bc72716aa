# -*- coding: utf-8 -*-
"""孤立化近傍・指数対・Conley 指数・Leray 簡約のテスト（合成した写像で検証）"""

import logging

import numpy as np
import pytest

from dynamics.enclosure import TubeMap
from dynamics.grid import CellSet, Grid
from analysis.conley import (
    CollisionWithOtherMorseSet,
    DimensionMismatch,
    Endomorphism,
    TouchesDomainBoundary,
    build_index_pair,
    conley_index,
    gker_quotient_betti,
    inv_part,
    isolating_nbhd,
    leray_reduce,
)
from analysis.homology import HomologyResult
from analysis.morse import Digraph, decompose
from analysis.oracles import adjacency, brute_force_inv_part


def synthetic(g, successors):
    """
    後続関数から Morse 分解とチューブ写像を組み立てる

    successors(multi) は多重添字のリストを返す。グリッド外の添字は捨てて、
    そのセルを「領域外へ出る」とみなす。
    """
    edges, rows, exits = [], [], []
    for cell in range(g.n_cells):
        multi = tuple(int(a) for a in g.multi_index(cell))
        inside, out = [], False
        for m in successors(multi):
            if all(0 <= a < n for a, n in zip(m, g.shape)):
                inside.append(g.linear_index(m))
            else:
                out = True
        edges += [(cell, t) for t in inside]
        rows.append(sorted(set(inside) | {cell}))
        exits.append(out)

    graph = Digraph.from_edges(g.n_cells, edges)
    graph.grid = g
    offsets = np.zeros(g.n_cells + 1, dtype=np.int64)
    np.cumsum([len(r) for r in rows], out=offsets[1:])
    targets = np.array([t for r in rows for t in r], dtype=np.int64)
    tube = TubeMap(g, {"kind": "synthetic"}, offsets, targets, offsets.copy(), targets.copy(),
                   np.array(exits, dtype=bool), np.zeros(g.n_cells, dtype=np.uint8),
                   np.ones(g.n_cells))
    return graph, decompose(graph), tube


def sign(x):
    return (x > 0) - (x < 0)


def attractor(m):
    (i,) = m
    return [(i - sign(i - 5),)]


def repeller(m):
    (i,) = m
    if i == 5:
        return [(4,), (5,), (6,)]
    return [(i + sign(i - 5),)]


def saddle_2d(m):
    i, j = m
    i2 = i - sign(i - 3)
    if j == 3:
        return [(i2, 2), (i2, 3), (i2, 4)]
    return [(i2, j + sign(j - 3))]


@pytest.fixture
def line():
    return Grid([(0, 11)], [11])


def test_attractor_index(line):
    F, md, T = synthetic(line, attractor)
    assert [s.tolist() for s in md.sets] == [[5]]
    ci = conley_index(md, 0, F, T, collar=2)
    assert ci.pair.N.tolist() == [3, 4, 5, 6, 7]
    assert ci.pair.S.tolist() == [5]
    assert ci.pair.P1.tolist() == [5]
    assert ci.pair.P2.tolist() == []
    assert ci.homology.betti == (1, 0)


def test_repeller_index(line):
    F, md, T = synthetic(line, repeller)
    assert [s.tolist() for s in md.sets] == [[5]]
    ci = conley_index(md, 0, F, T, collar=2)
    assert ci.pair.P1.tolist() == [3, 4, 5, 6, 7]
    assert ci.pair.P2.tolist() == [3, 7]
    assert ci.pair.exit_set.tolist() == [3, 7]
    assert ci.homology.betti == (0, 1)


def test_saddle_index():
    g = Grid([(0, 7), (0, 7)], [7, 7])
    F, md, T = synthetic(g, saddle_2d)
    center = g.linear_index((3, 3))
    assert [s.tolist() for s in md.sets] == [[center]]
    ci = conley_index(md, 0, F, T, collar=2)
    strip = [g.linear_index((3, j)) for j in range(1, 6)]
    assert ci.pair.S.tolist() == [center]
    assert ci.pair.P1.tolist() == strip
    assert ci.pair.P2.tolist() == [strip[0], strip[-1]]
    assert ci.homology.betti == (0, 1, 0)
    data = ci.to_dict()
    assert set(data) == {"set", "collar", "betti", "torsion", "index_pair"}
    assert data["index_pair"]["P1_size"] == 5
    assert "P1" not in data["index_pair"]


def test_collision_with_other_set(line):
    g = Digraph.from_edges(11, [(3, 3), (7, 7)])
    g.grid = line
    md = decompose(g)
    with pytest.raises(CollisionWithOtherMorseSet):
        isolating_nbhd(md, 0, 4)
    assert isolating_nbhd(md, 0, 2).tolist() == [1, 2, 3, 4, 5]


def test_boundary_touch_depends_on_exits(line, caplog):
    g = Digraph.from_edges(11, [(1, 1)])
    g.grid = line
    md = decompose(g)
    with pytest.raises(TouchesDomainBoundary):
        isolating_nbhd(md, 0, 2)

    _, _, quiet = synthetic(line, lambda m: [m])
    with caplog.at_level(logging.WARNING):
        N = isolating_nbhd(md, 0, 2, quiet)
    assert N.tolist() == [0, 1, 2, 3]
    assert "領域境界" in caplog.text

    _, _, leaky = synthetic(line, lambda m: [(m[0] - 1,)])
    with pytest.raises(TouchesDomainBoundary):
        isolating_nbhd(md, 0, 2, leaky)


def test_nbhd_argument_checks(line):
    _, md, _ = synthetic(line, attractor)
    with pytest.raises(IndexError):
        isolating_nbhd(md, 3, 2)
    with pytest.raises(ValueError):
        isolating_nbhd(md, 0, 0)


def test_index_pair_rejects_bad_arguments(line):
    _, _, T = synthetic(line, attractor)
    with pytest.raises(ValueError):
        build_index_pair(CellSet([4, 5, 6]), CellSet(), T)
    with pytest.raises(ValueError):
        build_index_pair(CellSet([4, 5, 6]), CellSet([9]), T)


@pytest.mark.parametrize("seed", range(6))
def test_inv_part_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = 14
    adj = rng.random((n, n)) < 0.2
    edges = [tuple(e) for e in np.argwhere(adj).tolist()]
    N = sorted(rng.choice(n, 9, replace=False).tolist())
    got = inv_part(CellSet(N), Digraph.from_edges(n, edges))
    assert got.tolist() == brute_force_inv_part(adjacency(n, edges), N)


def test_inv_part_of_empty_set():
    assert inv_part(CellSet(), Digraph.from_edges(2, [(0, 0)])).tolist() == []


def test_leray_identity_is_kept():
    reduced = leray_reduce(Endomorphism.identity([1, 2]))
    assert reduced.grading == (1, 2)
    assert reduced.dimension == 3


def test_leray_nilpotent_vanishes():
    reduced = leray_reduce(Endomorphism.from_matrix([[0, 1], [0, 0]]))
    assert reduced.grading == (0,)
    assert reduced.dimension == 0
    assert reduced.charpoly() == ["1"]


def test_leray_drops_generalized_kernel():
    reduced = leray_reduce(Endomorphism.from_matrix([[2, 0], [0, 0]]))
    assert reduced.grading == (1,)
    assert reduced.matrix.tolist() == [[2]]
    assert reduced.charpoly() == ["1", "-2"]


def test_leray_blockwise():
    a = Endomorphism.from_blocks([[[1]], [], [[0, 1], [0, 0]]])
    assert a.grading == (1, 0, 2)
    assert leray_reduce(a).grading == (1, 0, 0)


def test_gker_quotient_betti():
    h = HomologyResult((0, 1, 0), ((), (), ()))
    assert gker_quotient_betti(h) == [0, 1, 0]
    assert gker_quotient_betti(h, Endomorphism.from_blocks([[], [[1]], []])) == [0, 1, 0]
    assert gker_quotient_betti(h, Endomorphism.from_blocks([[], [[0]], []])) == [0, 0, 0]
    with pytest.raises(DimensionMismatch):
        gker_quotient_betti(h, Endomorphism.identity([1]))


def test_endomorphism_validation():
    with pytest.raises(ValueError):
        Endomorphism.from_matrix([[1, 2, 3], [4, 5, 6]])
    with pytest.raises(ValueError):
        Endomorphism.from_matrix([[1, 0], [0, 1]], grading=[1, 2])
