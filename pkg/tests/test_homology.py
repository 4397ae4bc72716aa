# -*- coding: utf-8 -*-
"""相対立方体ホモロジーのテスト"""

import numpy as np
import pytest

from dynamics.grid import CellSet, Grid
from analysis.homology import (
    HomologyResult,
    RelativeComplex,
    cell_faces,
    export_complex,
    relative_homology,
    smith_invariants,
)
from analysis.oracles import brute_force_relative_homology
from app.selftest import homology_fixtures


def block(g, i0, i1, j0, j1):
    return CellSet(g.linear_index((i, j)) for i in range(i0, i1) for j in range(j0, j1))


@pytest.mark.parametrize("name,g,P1,P2,expected", homology_fixtures(),
                         ids=[fixture[0] for fixture in homology_fixtures()])
def test_known_pairs(name, g, P1, P2, expected):
    result = relative_homology(g, P1, P2)
    assert result.betti == expected
    assert not result.has_torsion
    assert brute_force_relative_homology(g, P1, P2).betti == expected


def test_interval_relative_to_both_ends():
    g = Grid([(0, 5)], [5])
    result = relative_homology(g, CellSet([1, 2, 3]), CellSet([1, 3]))
    assert result.betti == (0, 1)


def test_hollow_cube():
    g = Grid([(0, 3)] * 3, [3, 3, 3])
    cube = g.all_cells()
    center = CellSet([g.linear_index((1, 1, 1))])
    assert relative_homology(g, cube - center, CellSet()).betti == (1, 0, 1, 0)
    assert relative_homology(g, center, CellSet()).betti == (1, 0, 0, 0)


def test_two_components():
    g = Grid([(0, 6), (0, 6)], [6, 6])
    P1 = block(g, 0, 2, 0, 2) | block(g, 4, 6, 4, 6)
    result = relative_homology(g, P1, CellSet())
    assert result.betti == (2, 0, 0)
    assert result.euler_characteristic() == 2


def test_empty_pair():
    g = Grid([(0, 2), (0, 2)], [2, 2])
    assert relative_homology(g, CellSet(), CellSet()).betti == (0, 0, 0)
    assert relative_homology(g, g.all_cells(), g.all_cells()).betti == (0, 0, 0)


def test_requires_nested_pair():
    g = Grid([(0, 2), (0, 2)], [2, 2])
    with pytest.raises(ValueError):
        relative_homology(g, CellSet([0]), CellSet([1]))


@pytest.mark.parametrize("columns,expected", [
    ({0: {0: 2}, 1: {1: 4}}, [2, 4]),
    ({0: {0: 2, 1: 6}, 1: {0: 4, 1: 8}}, [2, 4]),
    ({0: {0: 1, 1: 3}, 1: {0: 2, 1: 4}}, [1, 2]),
    ({0: {0: 4}, 1: {1: 6}}, [2, 12]),
    ({}, []),
])
def test_smith_invariants(columns, expected):
    assert smith_invariants(columns) == expected


def test_faces_of_single_cell():
    faces = cell_faces((2, 2), np.array([[0, 0]]))
    assert faces.size == 9
    cx = RelativeComplex((2, 2), np.array([[0, 0]]), np.zeros((0, 2), dtype=np.int64))
    assert cx.counts() == [4, 4, 1]


def test_boundary_of_boundary_is_zero():
    g = Grid([(0, 3), (0, 3)], [3, 3])
    cx = RelativeComplex(g.shape, g.multi_indices(g.all_cells().indices), np.zeros((0, 2), dtype=np.int64))
    d1, d2 = cx.boundary(1), cx.boundary(2)
    for col, entries in d2.items():
        total = {}
        for edge, coeff in entries.items():
            for vertex, c in d1.get(edge, {}).items():
                total[vertex] = total.get(vertex, 0) + coeff * c
        assert all(v == 0 for v in total.values()), col


def test_homology_result_serialisation():
    result = HomologyResult((0, 1, 0), ((), (), ()))
    assert result.to_dict() == {"betti": [0, 1, 0], "torsion": [[], [], []]}
    assert result.euler_characteristic() == -1
    assert HomologyResult((1,), ((2,),)).has_torsion


def test_export_complex():
    g = Grid([(0, 3)], [3])
    text = export_complex(g, CellSet([1]), CellSet())
    lines = text.splitlines()
    assert lines[0] == "# morsescope relative cubical complex v1"
    assert lines[1] == "# doubled_shape 7"
    assert lines[2] == "# generators 2 1"
    assert lines[3:] == ["0 2 :", "0 4 :", "1 3 : -2 +4"]
