# -*- coding: utf-8 -*-
"""判定基準 (A)/(B) のテスト"""

import pytest

from dynamics.enclosure import Fixed, build_tube_map
from dynamics.grid import Grid
from analysis.morse import Digraph, decompose
from analysis.verify import (
    COUNTEREXAMPLE_STRATEGY,
    GridMismatch,
    check_criterion,
    counterexample_fixture,
)


def test_constant_step_is_certified_without_tube():
    md = decompose(Digraph.from_edges(2, [(0, 0), (1, 1)]))
    report = check_criterion(md, None, Fixed(0.5))
    assert report.mode == "A"
    assert report.certified
    assert report.to_dict() == {"mode": "A", "verdict": "certified", "reasons": [], "per_set": {}}


def test_variable_step_requires_tube():
    md = decompose(Digraph.from_edges(2, [(0, 0), (1, 1)]))
    with pytest.raises(ValueError):
        check_criterion(md, None, COUNTEREXAMPLE_STRATEGY)


def test_circle_counterexample_is_rejected():
    md, tube = counterexample_fixture()
    assert [s.tolist() for s in md.sets] == [[0], [32]]
    assert md.edges == [(0, 1)]
    report = check_criterion(md, tube, COUNTEREXAMPLE_STRATEGY)
    assert report.mode == "B"
    assert not report.certified
    assert report.per_set[0].disjoint_from == {1: False}
    assert report.per_set[1].disjoint_from == {0: False}
    assert len(report.reasons) == 2
    assert len(report.per_set[0].z_cells) == 64


def test_report_serialisation_without_cells():
    md, tube = counterexample_fixture()
    data = check_criterion(md, tube, COUNTEREXAMPLE_STRATEGY).to_dict(include_cells=False)
    assert data["verdict"] == "rejected"
    assert "z_cells" not in data["per_set"]["0"]
    assert data["per_set"]["0"]["z_size"] == 64
    assert data["per_set"]["0"]["disjoint_from"] == {"1": False}


def test_grid_mismatch(saddle):
    md, _ = counterexample_fixture()
    other = build_tube_map(saddle, Grid([(-1, 1), (-1, 1)], [4, 4]), Fixed(0.1))
    with pytest.raises(GridMismatch):
        check_criterion(md, other, COUNTEREXAMPLE_STRATEGY)
