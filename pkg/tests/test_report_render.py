# -*- coding: utf-8 -*-
"""レポート（決定性ハッシュ・スキーマ検証）と SVG 描画のテスト"""

import xml.etree.ElementTree as ET

import jsonschema
import pytest

from dynamics.grid import CellSet, Grid
from analysis.morse import Digraph, decompose
from analysis.verify import COUNTEREXAMPLE_STRATEGY, check_criterion, counterexample_fixture
from app.render import PALETTE, darken, render_report, render_svg, set_color
from app.report import MissingArtifact, Report, RunStatus, load_report, morse_section, validate_report, write_report

SVG = "{http://www.w3.org/2000/svg}"


def rects(svg_text, group_id):
    root = ET.fromstring(svg_text)
    for g in root.iter(f"{SVG}g"):
        if g.get("id") == group_id:
            return list(g.iter(f"{SVG}rect"))
    return []


def small_report(include_cells=True):
    g = Grid([(-1, 1), (-1, 1)], [4, 4])
    graph = Digraph.from_edges(16, [(0, 0), (0, 5), (5, 5), (6, 10), (10, 6)])
    graph.grid = g
    md = decompose(graph)
    return Report(grid=g.describe(), vector_field={"name": "demo", "dimension": 2,
                                                   "components": ["-x1", "x2"], "params": {}},
                  morse=morse_section(md, include_cells))


def test_hash_ignores_timings():
    a, b = small_report(), small_report()
    a.timings_ms = {"map": 12.5}
    b.timings_ms = {"map": 99.0, "scc": 1.0}
    assert a.seal() == b.seal()
    assert len(a.determinism_hash) == 64

    b.status = RunStatus(exit_code=3, outcome="rejected")
    assert b.seal() != a.determinism_hash


def test_schema_validation():
    report = small_report()
    with pytest.raises(jsonschema.ValidationError):
        validate_report(report)
    report.seal()
    validate_report(report)
    data = report.model_dump(mode="json")
    data["status"]["exit_code"] = 7
    with pytest.raises(jsonschema.ValidationError):
        validate_report(data)


def test_morse_section():
    section = small_report().morse
    assert section.count == 3
    assert [s.size for s in section.sets] == [1, 1, 2]
    assert section.edges == [(0, 1)]
    assert section.census["histogram"] == {"1": 2, "2": 1}
    assert small_report(include_cells=False).morse.sets[0].cells is None


def test_write_and_load(tmp_path):
    path = write_report(small_report(), tmp_path / "nested" / "report.json")
    data = load_report(path)
    assert data["tool"] == "morsescope"
    assert data["morse"]["sets"][2]["cells"] == [6, 10]


def test_load_missing_or_broken(tmp_path):
    with pytest.raises(MissingArtifact):
        load_report(tmp_path / "none.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    with pytest.raises(MissingArtifact):
        load_report(broken)


def test_darken():
    assert darken("#ffffff", 0.5) == "#808080"
    assert darken("#000000") == "#000000"
    assert set_color(len(PALETTE)) == set_color(0)


def test_render_is_deterministic():
    g = Grid([(-1, 1), (-1, 1)], [4, 4])
    sets = [CellSet([0, 5]), CellSet([15])]
    first = render_svg(g, sets)
    assert first == render_svg(g, sets)
    assert len(rects(first, "set-0")) == 2
    assert len(rects(first, "set-1")) == 1
    assert rects(first, "set-1")[0].get("fill") == set_color(1)
    assert "<title>Morse sets</title>" in first


def test_render_cell_placement():
    g = Grid([(0, 4), (0, 4)], [4, 4])
    (rect,) = rects(render_svg(g, [CellSet([g.linear_index((0, 3))])]), "set-0")
    # 行は上下反転（y 座標が大きいほど上）
    assert rect.get("x") == "48"
    assert rect.get("y") == "48"
    assert rect.get("width") == "128"


def test_render_one_dimensional_grid_as_row():
    g = Grid([(0, 4)], [4])
    svg = render_svg(g, [CellSet([1, 2])])
    cells = rects(svg, "set-0")
    assert len(cells) == 2
    assert all(r.get("height") == "512" for r in cells)


def test_render_projects_higher_dimensions():
    g = Grid([(0, 1)] * 3, [2, 2, 2])
    svg = render_svg(g, [g.all_cells()])
    assert len(rects(svg, "set-0")) == 4


def test_render_report_with_collars():
    md, tube = counterexample_fixture()
    check = check_criterion(md, tube, COUNTEREXAMPLE_STRATEGY)
    report = Report(grid=md.grid.describe(), morse=morse_section(md),
                    verification=check.to_dict()).model_dump(mode="json")
    svg = render_report(report)
    collars = rects(svg, "collars")
    assert len(collars) == 2 * 63
    assert collars[0].get("fill") == darken(set_color(0))
    assert collars[-1].get("fill") == darken(set_color(1))


def test_render_report_requires_cells():
    report = small_report(include_cells=False).model_dump(mode="json")
    with pytest.raises(MissingArtifact):
        render_report(report)
    with pytest.raises(MissingArtifact):
        render_report({"morse": None})
