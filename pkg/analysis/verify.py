#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Morse 分解の検証モジュール

φ_τ の Morse 分解が流れの Morse 分解でもあるための十分条件を確かめる
- 判定基準 (A): τ が定数（Fixed 戦略）なら無条件に成立
- 判定基準 (B): 各 p について φ_[0,τ](N_p) ⊂ X かつ φ_[0,τ](N_p) ∩ N_q = ∅
- 円周流の反例フィクスチャ（基準 (B) が棄却することを確かめる）
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from dynamics import MorsescopeError
from dynamics.enclosure import Expression, Fixed, StepStrategy, TubeMap
from dynamics.grid import CellSet, Grid
from analysis.morse import Digraph, MorseDecomposition, decompose

logger = logging.getLogger(__name__)


class GridMismatch(MorsescopeError):
    """Morse 分解とチューブ写像のグリッドが異なる"""


@dataclass
class SetCheck:
    """Morse 集合 p ごとの検証結果"""

    z_cells: CellSet
    subset_of_X: bool
    disjoint_from: Dict[int, bool]
    failed_cells: int

    def to_dict(self, include_cells: bool = True) -> dict:
        out = {
            "z_size": len(self.z_cells),
            "subset_of_X": self.subset_of_X,
            "disjoint_from": {str(q): ok for q, ok in sorted(self.disjoint_from.items())},
            "failed_cells": self.failed_cells,
        }
        if include_cells:
            out["z_cells"] = self.z_cells.tolist()
        return out


@dataclass
class VerificationReport:
    """判定基準の検証結果"""

    mode: str                                  # "A" | "B"
    per_set: Dict[int, SetCheck] = field(default_factory=dict)
    verdict: str = "certified"                 # "certified" | "rejected"
    reasons: List[str] = field(default_factory=list)

    @property
    def certified(self) -> bool:
        return self.verdict == "certified"

    def to_dict(self, include_cells: bool = True) -> dict:
        return {
            "mode": self.mode,
            "verdict": self.verdict,
            "reasons": list(self.reasons),
            "per_set": {str(p): c.to_dict(include_cells) for p, c in sorted(self.per_set.items())},
        }


def check_criterion(md: MorseDecomposition, T: Optional[TubeMap], st: StepStrategy) -> VerificationReport:
    """
    判定基準 (A)/(B) の検証

    Args:
        md (MorseDecomposition): φ_τ の Morse 分解
        T (TubeMap): 同じグリッド・戦略で構築したチューブ写像（mode A では不要）
        st (StepStrategy): 時間刻み戦略

    Returns:
        VerificationReport: mode A なら無条件に certified
    """
    if T is not None and md.grid is not None and md.grid != T.grid:
        raise GridMismatch(f"グリッドが一致しません: {md.grid} vs {T.grid}")
    if isinstance(st, Fixed):
        logger.info("時間刻みが一定のため判定基準 (A) で認定します")
        return VerificationReport(mode="A")
    if T is None:
        raise ValueError("判定基準 (B) にはチューブ写像が必要です")

    report = VerificationReport(mode="B")
    for p, cells in enumerate(md.sets):
        idx = cells.indices
        failed = int(T.failed_mask[idx].sum())
        ok_cells = idx[~T.failed_mask[idx]]
        rows = [T.tube_row(int(c)) for c in ok_cells]
        z = CellSet(np.concatenate(rows)) if rows else CellSet()
        if failed:
            z = T.grid.all_cells()
        subset = not bool(T.tube_exits_mask[idx].any()) and failed == 0
        disjoint = {q: z.isdisjoint(other) for q, other in enumerate(md.sets) if q != p}
        report.per_set[p] = SetCheck(z, subset, disjoint, failed)

        if failed:
            report.reasons.append(f"Morse 集合 {p}: チューブ積分に失敗したセルが {failed} 個あります")
        if not subset:
            report.reasons.append(f"Morse 集合 {p}: φ_[0,τ](N_p) が領域 X からはみ出します")
        for q, ok in sorted(disjoint.items()):
            if not ok:
                report.reasons.append(f"Morse 集合 {p}: φ_[0,τ](N_p) が N_{q} と交わります")

    report.verdict = "rejected" if report.reasons else "certified"
    if report.certified:
        logger.info(f"判定基準 (B) を満たしました（Morse 集合 {len(md.sets)} 個）")
    else:
        logger.warning(f"判定基準 (B) で棄却: {len(report.reasons)} 件の違反")
    return report


# ----------------------------------------------------------------------
# 円周流の反例
# ----------------------------------------------------------------------
COUNTEREXAMPLE_CELLS = 64
COUNTEREXAMPLE_STRATEGY = Expression("sin(x1) + 6.283185307179586")


def counterexample_fixture() -> Tuple[MorseDecomposition, TubeMap]:
    """
    円周流 θ' = 1 と τ(θ) = sin θ + 2π の組合せ的モデル

    - [0, 2π] を 64 セルに分けた 1 次元グリッド（セル 0 が θ=0、セル 32 が θ=π）
    - 写像: セル 0 と 32 に自己ループ、0 → 1 → ... → 32 の道
      （φ_τ のアトラクタ・リペラ対、Morse グラフの辺は 1 本）
    - チューブ: 長さ約 2π なのでどのセルからも円周全体を覆う

    判定には COUNTEREXAMPLE_STRATEGY（τ が定数でない）を使う

    Returns:
        (MorseDecomposition, TubeMap)
    """
    n = COUNTEREXAMPLE_CELLS
    grid = Grid([(0, "6.283185307179586")], [n])
    edges = [(0, 0), (32, 32)] + [(i, i + 1) for i in range(32)]
    graph = Digraph.from_edges(n, edges)
    graph.grid = grid
    md = decompose(graph)

    everything = np.arange(n, dtype=np.int64)
    offsets = np.arange(n + 1, dtype=np.int64) * n
    targets = np.tile(everything, n)
    header = {
        "format": "morsescope-tube",
        "format_version": 1,
        "dimension": 1,
        "grid": grid.describe(),
        "strategy": COUNTEREXAMPLE_STRATEGY.describe(),
        "integrator": {},
        "field": {"name": "circle_fixture", "dimension": 1, "components": ["1"], "params": {}},
    }
    tube = TubeMap(grid, header, offsets, targets, offsets.copy(), targets.copy(),
                   np.zeros(n, dtype=bool), np.zeros(n, dtype=np.uint8),
                   np.full(n, 2.0 * math.pi + 1.0))
    return md, tube
