#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
自己診断

組み込みのフィクスチャを実行して合否を表示する
- 区間演算の包含（乱数標本）
- 強連結成分と Morse グラフ（総当たりとの比較）
- 相対ホモロジー（既知の対と密行列 SNF との比較）
- 円周流の反例が判定基準 (B) で棄却されること

tamper にチェック名を渡すと、そのチェックの期待値を故意に壊す（テスト用）
"""

import logging
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from dynamics.grid import CellSet, Grid
from dynamics.interval import Interval
from analysis.homology import relative_homology
from analysis.morse import Digraph, decompose
from analysis.oracles import brute_force_morse_graph, brute_force_morse_sets, brute_force_relative_homology
from analysis.verify import COUNTEREXAMPLE_STRATEGY, check_criterion, counterexample_fixture

logger = logging.getLogger(__name__)

CHECKS = ("interval", "scc", "homology", "counterexample")


def check_interval(tamper: bool = False, samples: int = 2000, seed: int = 7) -> Tuple[bool, str]:
    rng = np.random.default_rng(seed)
    a_lo = rng.uniform(-10, 10, samples)
    b_lo = rng.uniform(-10, 10, samples)
    a = Interval(a_lo, a_lo + rng.uniform(0, 3, samples))
    b = Interval(b_lo, b_lo + rng.uniform(0, 3, samples))
    pos = Interval(b.lo - b.lo.min() + 0.5, b.hi - b.lo.min() + 0.5)
    x = a.lo + rng.random(samples) * (a.hi - a.lo)
    y = b.lo + rng.random(samples) * (b.hi - b.lo)
    z = pos.lo + rng.random(samples) * (pos.hi - pos.lo)
    if tamper:
        x = a.hi + 1.0
    cases = {
        "add": ((a + b), x + y),
        "sub": ((a - b), x - y),
        "mul": ((a * b), x * y),
        "div": ((a / pos), x / z),
        "sqr": (a.pow_int(2), x * x),
        "sin": (a.sin(), np.sin(x)),
        "cos": (a.cos(), np.cos(x)),
    }
    bad = [name for name, (iv, val) in cases.items() if not iv.contains(val).all()]
    return not bad, f"{samples} 標本 x {len(cases)} 演算" + (f", 違反: {bad}" if bad else "")


def check_scc(tamper: bool = False, graphs: int = 40, n: int = 10, seed: int = 11) -> Tuple[bool, str]:
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(graphs):
        adj = rng.random((n, n)) < 0.18
        edges = [tuple(e) for e in np.argwhere(adj).tolist()]
        md = decompose(Digraph.from_edges(n, edges))
        expected_sets = brute_force_morse_sets(adj)
        expected_edges = brute_force_morse_graph(adj, expected_sets)
        if tamper:
            expected_sets = expected_sets + [[n]]
        got = [s.tolist() for s in md.sets]
        if got != expected_sets or md.edges != expected_edges:
            mismatches += 1
    return mismatches == 0, f"{graphs} 個の乱択グラフ（{n} 頂点）, 不一致 {mismatches}"


def _block(grid: Grid, i0: int, i1: int, j0: int, j1: int) -> CellSet:
    return CellSet(grid.linear_index((i, j)) for i in range(i0, i1) for j in range(j0, j1))


def homology_fixtures() -> List[Tuple[str, Grid, CellSet, CellSet, Tuple[int, ...]]]:
    """(名前, グリッド, P1, P2, 期待ベッチ数)"""
    g = Grid([(0, 5), (0, 5)], [5, 5])
    center = CellSet([g.linear_index((2, 2))])
    block = _block(g, 1, 4, 1, 4)
    ring = block - center

    w = Grid([(0, 7), (0, 7)], [7, 7])
    hole = CellSet([w.linear_index((3, 3))])
    thick = _block(w, 0, 7, 0, 7) - hole
    outer_ring = _block(w, 0, 7, 0, 7) - _block(w, 1, 6, 1, 6)
    inner_ring = _block(w, 2, 5, 2, 5) - hole
    return [
        ("単一セル", g, center, CellSet(), (1, 0, 0)),
        ("反発点 (D², ∂D²)", g, block, ring, (0, 0, 1)),
        ("吸引周期軌道の円環", w, thick, CellSet(), (1, 1, 0)),
        ("反発周期軌道の円環", w, thick, outer_ring | inner_ring, (0, 1, 1)),
    ]


def check_homology(tamper: bool = False) -> Tuple[bool, str]:
    failures = []
    for name, g, P1, P2, expected in homology_fixtures():
        got = relative_homology(g, P1, P2)
        oracle = brute_force_relative_homology(g, P1, P2)
        if tamper:
            expected = tuple(b + 1 for b in expected)
        if got.betti != expected or oracle.betti != expected or got.has_torsion:
            failures.append(f"{name}: {got.betti} / 参照 {oracle.betti} / 期待 {expected}")
    return not failures, f"{len(homology_fixtures())} 組" + (f", 失敗: {failures}" if failures else "")


def check_counterexample(tamper: bool = False) -> Tuple[bool, str]:
    md, tube = counterexample_fixture()
    report = check_criterion(md, tube, COUNTEREXAMPLE_STRATEGY)
    crossed = [not ok for check in report.per_set.values() for ok in check.disjoint_from.values()]
    expected = "certified" if tamper else "rejected"
    ok = report.verdict == expected and len(crossed) == 2 and all(crossed)
    return ok, f"判定 {report.verdict}, 交差 {sum(crossed)}/{len(crossed)}"


_CHECKS: Dict[str, Callable[..., Tuple[bool, str]]] = {
    "interval": check_interval,
    "scc": check_scc,
    "homology": check_homology,
    "counterexample": check_counterexample,
}


def run_selftest(tamper: Optional[str] = None, quiet: bool = False) -> bool:
    """
    全チェックを実行する

    Args:
        tamper (str): 期待値を壊すチェック名（テスト用）
        quiet (bool): 表示しない

    Returns:
        bool: すべて合格なら True
    """
    if tamper is not None and tamper not in _CHECKS:
        raise ValueError(f"未知のチェック: {tamper}（{', '.join(CHECKS)}）")
    passed = 0
    for name in CHECKS:
        try:
            ok, detail = _CHECKS[name](tamper == name)
        except Exception as e:
            logger.exception(f"自己診断 {name} で例外")
            ok, detail = False, f"例外: {e}"
        passed += ok
        if not quiet:
            print(f"{'✅' if ok else '❌'} {name}: {detail}")
    if not quiet:
        print(f"🎯 自己診断: {passed}/{len(CHECKS)} 合格")
    return passed == len(CHECKS)
