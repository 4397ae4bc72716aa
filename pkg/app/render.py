#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Morse 集合の描画

- セルごとの矩形で Morse 集合を塗り分けた SVG（固定パレット、集合番号で色が決まる）
- 判定基準 (B) の 𝒵(p) \\ 𝒩(p) は同じ色の暗い影で描く
- 軸と領域の枠を含み、同じ入力に対して同じバイト列を出力する
- 1 次元は 1 行、3 次元以上は先頭 2 座標への射影
"""

import logging
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from dynamics.grid import CellSet, Grid
from app.report import MissingArtifact

logger = logging.getLogger(__name__)

PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
    "#e377c2", "#17becf", "#bcbd22", "#7f7f7f", "#393b79", "#637939",
)
PLOT_SIZE = 512.0
MARGIN = 48.0
SVG_NS = "http://www.w3.org/2000/svg"


def set_color(p: int) -> str:
    return PALETTE[p % len(PALETTE)]


def darken(color: str, factor: float = 0.55) -> str:
    """#rrggbb を factor 倍に暗くする"""
    rgb = [int(color[i:i + 2], 16) for i in (1, 3, 5)]
    return "#" + "".join(f"{int(round(c * factor)):02x}" for c in rgb)


def _num(x: float) -> str:
    text = f"{x:.3f}".rstrip("0").rstrip(".")
    return "0" if text in ("-0", "") else text


def _plane(grid: Grid, cells: CellSet) -> np.ndarray:
    """セル → 描画平面上の (列, 行)（重複は除く）"""
    if len(cells) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    multi = grid.multi_indices(cells.indices)
    if grid.dim == 1:
        multi = np.concatenate([multi, np.zeros_like(multi)], axis=1)
    return np.unique(multi[:, :2], axis=0)


def render_svg(grid: Grid, sets: Sequence[CellSet],
               collars: Optional[Dict[int, CellSet]] = None, title: str = "Morse sets") -> str:
    """
    Morse 集合の SVG

    Args:
        grid (Grid): グリッド
        sets: Morse 集合（番号順）
        collars (dict): 集合番号 → 𝒵(p) \\ 𝒩(p)（検証表示用、任意）
        title (str): 図のタイトル

    Returns:
        str: SVG 文書
    """
    kx = grid.divisions[0]
    ky = grid.divisions[1] if grid.dim > 1 else 1
    cw, ch = PLOT_SIZE / kx, PLOT_SIZE / ky
    width = height = PLOT_SIZE + 2 * MARGIN

    svg = ET.Element("svg", {
        "xmlns": SVG_NS,
        "width": _num(width),
        "height": _num(height),
        "viewBox": f"0 0 {_num(width)} {_num(height)}",
    })
    ET.SubElement(svg, "title").text = title
    ET.SubElement(svg, "rect", {"x": "0", "y": "0", "width": _num(width), "height": _num(height),
                                "fill": "#ffffff"})

    def cell_rects(parent: ET.Element, cells: CellSet, fill: str):
        for i, j in _plane(grid, cells).tolist():
            ET.SubElement(parent, "rect", {
                "x": _num(MARGIN + i * cw),
                "y": _num(MARGIN + (ky - 1 - j) * ch),
                "width": _num(cw),
                "height": _num(ch),
                "fill": fill,
            })

    if collars:
        layer = ET.SubElement(svg, "g", {"id": "collars"})
        for p in sorted(collars):
            cell_rects(layer, collars[p], darken(set_color(p)))
    layer = ET.SubElement(svg, "g", {"id": "morse-sets"})
    for p, cells in enumerate(sets):
        group = ET.SubElement(layer, "g", {"id": f"set-{p}"})
        cell_rects(group, cells, set_color(p))

    _axes(svg, grid)
    ET.indent(svg)
    return ET.tostring(svg, encoding="unicode") + "\n"


def _axes(svg: ET.Element, grid: Grid):
    frame = ET.SubElement(svg, "g", {"id": "axes", "stroke": "#000000", "fill": "none"})
    ET.SubElement(frame, "rect", {"x": _num(MARGIN), "y": _num(MARGIN),
                                  "width": _num(PLOT_SIZE), "height": _num(PLOT_SIZE),
                                  "stroke-width": "1"})
    labels = ET.SubElement(svg, "g", {"id": "labels", "font-family": "Helvetica", "font-size": "11",
                                      "fill": "#000000"})
    (x_lo, x_hi) = grid.bounds[0]
    for frac in (0.0, 0.5, 1.0):
        x = MARGIN + frac * PLOT_SIZE
        value = float(x_lo + (x_hi - x_lo) * frac)
        ET.SubElement(frame, "line", {"x1": _num(x), "y1": _num(MARGIN + PLOT_SIZE),
                                      "x2": _num(x), "y2": _num(MARGIN + PLOT_SIZE + 5)})
        ET.SubElement(labels, "text", {"x": _num(x), "y": _num(MARGIN + PLOT_SIZE + 18),
                                       "text-anchor": "middle"}).text = f"{value:g}"
    ET.SubElement(labels, "text", {"x": _num(MARGIN + PLOT_SIZE / 2), "y": _num(MARGIN + PLOT_SIZE + 36),
                                   "text-anchor": "middle"}).text = "x1"
    if grid.dim > 1:
        (y_lo, y_hi) = grid.bounds[1]
        for frac in (0.0, 0.5, 1.0):
            y = MARGIN + (1.0 - frac) * PLOT_SIZE
            value = float(y_lo + (y_hi - y_lo) * frac)
            ET.SubElement(frame, "line", {"x1": _num(MARGIN - 5), "y1": _num(y),
                                          "x2": _num(MARGIN), "y2": _num(y)})
            ET.SubElement(labels, "text", {"x": _num(MARGIN - 8), "y": _num(y + 4),
                                           "text-anchor": "end"}).text = f"{value:g}"
        ET.SubElement(labels, "text", {"x": _num(MARGIN / 3), "y": _num(MARGIN + PLOT_SIZE / 2),
                                       "text-anchor": "middle"}).text = "x2"


def _grid_from_report(report: dict) -> Grid:
    grid = report.get("grid")
    if not grid:
        raise MissingArtifact("レポートにグリッド情報がありません")
    return Grid([tuple(pair) for pair in grid["domain"]], grid["divisions"])


def render_report(report: dict) -> str:
    """
    レポートから SVG を再構築する

    セル一覧（outputs.include_cells）が必要
    """
    grid = _grid_from_report(report)
    morse = report.get("morse") or {"sets": []}
    sets: List[CellSet] = []
    for entry in morse["sets"]:
        if entry.get("cells") is None:
            raise MissingArtifact(f"Morse 集合 {entry['index']} のセル一覧がレポートにありません")
        sets.append(CellSet(entry["cells"]))

    collars = None
    verification = report.get("verification")
    if verification and verification.get("mode") == "B":
        collars = {}
        for key, check in verification["per_set"].items():
            p = int(key)
            if "z_cells" in check and p < len(sets):
                collars[p] = CellSet(check["z_cells"]) - sets[p]
    name = (report.get("vector_field") or {}).get("name", "morse")
    return render_svg(grid, sets, collars, title=f"{name}: {len(sets)} Morse sets")


def write_text(text: str, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    logger.info(f"書き出しました: {path}")
    return path
