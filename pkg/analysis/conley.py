#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Conley 指数モジュール

- Morse 集合の組合せ的孤立化近傍（collar 層の膨張）
- 近傍内の不変部分（前方・後方の刈り込み）
- チューブ写像から作る指数対 (P1, P2) とその検証
- 相対立方体ホモロジー（analysis.homology に委譲）
- 指数写像の Leray 簡約と gker による商のベッチ数（有理数係数、sympy）
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import sympy

from dynamics import MorsescopeError
from dynamics.enclosure import TubeMap
from dynamics.grid import CellSet
from analysis.homology import HomologyResult, relative_homology
from analysis.morse import GraphLike, MorseDecomposition, _as_digraph

logger = logging.getLogger(__name__)

__all__ = [
    "ConleyError", "CollisionWithOtherMorseSet", "TouchesDomainBoundary",
    "InteriorConditionFailed", "DimensionMismatch",
    "IndexPair", "ConleyIndex", "Endomorphism",
    "isolating_nbhd", "inv_part", "build_index_pair", "relative_homology",
    "conley_index", "leray_reduce", "gker_quotient_betti",
]


class ConleyError(MorsescopeError):
    """Conley 指数計算の基底例外"""


class CollisionWithOtherMorseSet(ConleyError):
    """膨張した近傍が他の Morse 集合と交わる"""

    def __init__(self, p: int, others: Sequence[int]):
        self.p = p
        self.others = list(others)
        super().__init__(f"Morse 集合 {p} の近傍が他の Morse 集合 {self.others} と交わります")


class TouchesDomainBoundary(ConleyError):
    """近傍が領域 X の境界に達し、かつ流れが X から出る"""


class InteriorConditionFailed(ConleyError):
    """不変部分が P2 と交わる、または近傍の内部にない"""


class DimensionMismatch(ConleyError):
    """自己準同型の次数ブロックとホモロジーの次元が合わない"""


# ----------------------------------------------------------------------
# 孤立化近傍と不変部分
# ----------------------------------------------------------------------
def isolating_nbhd(md: MorseDecomposition, p: int, collar: int,
                   tube_map: Optional[TubeMap] = None) -> CellSet:
    """
    Morse 集合 p を collar 層膨張させた孤立化近傍の候補

    Args:
        md (MorseDecomposition): Morse 分解（grid 必須）
        p (int): Morse 集合の番号
        collar (int): 膨張の層数（1 以上）
        tube_map (TubeMap): 領域境界に達したとき流出の有無を確かめる

    Returns:
        CellSet: 近傍 N（X 内に制限済み）
    """
    if md.grid is None:
        raise ValueError("Morse 分解にグリッドがありません")
    if not 0 <= p < len(md.sets):
        raise IndexError(f"Morse 集合 {p} は存在しません（全 {len(md.sets)} 個）")
    if collar < 1:
        raise ValueError(f"collar は 1 以上: {collar}")

    N, clipped = md.grid.dilate(md.sets[p], collar)
    hit = np.unique(md.cell_to_set[N.indices])
    others = [int(q) for q in hit if q >= 0 and q != p]
    if others:
        raise CollisionWithOtherMorseSet(p, others)

    if clipped:
        if tube_map is not None and not tube_map.tube_exits_mask[N.indices].any():
            logger.warning(f"Morse 集合 {p} の近傍が領域境界に達しています（流出なしのため続行）")
        else:
            raise TouchesDomainBoundary(f"Morse 集合 {p} の近傍が領域境界に達し、流れが領域外へ出ます")
    return N


def _gather_rows(offsets: np.ndarray, targets: np.ndarray, cells: np.ndarray):
    """CSR の複数行を (owner, target) にまとめて取り出す"""
    starts = offsets[cells]
    counts = offsets[cells + 1] - starts
    owner = np.repeat(np.arange(cells.size, dtype=np.int64), counts)
    base = np.repeat(starts - np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
    return owner, targets[base + np.arange(owner.size, dtype=np.int64)]


def _local_edges(cells: np.ndarray, offsets: np.ndarray, targets: np.ndarray,
                 failed: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """cells 内に閉じた辺を局所番号で返す（失敗セルは cells 全体へ辺を持つ）"""
    n = cells.size
    owner, tgt = _gather_rows(offsets, targets, cells)
    pos = np.searchsorted(cells, tgt)
    pos_c = np.minimum(pos, max(n - 1, 0))
    inside = (cells[pos_c] == tgt) if n else np.zeros(0, dtype=bool)
    src, dst = owner[inside], pos_c[inside]
    bad = np.flatnonzero(failed[cells])
    if bad.size:
        src = np.concatenate([src, np.repeat(bad, n)])
        dst = np.concatenate([dst, np.tile(np.arange(n, dtype=np.int64), bad.size)])
    return src, dst


def _survivors(n: int, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """後続を持たない頂点を不動点まで刈り込み、残った頂点のマスク"""
    out_deg = np.bincount(src, minlength=n).tolist()
    order = np.argsort(dst, kind="stable")
    pred_off = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(dst, minlength=n), out=pred_off[1:])
    preds = src[order].tolist()
    pred_off = pred_off.tolist()

    alive = [True] * n
    queue = [v for v in range(n) if out_deg[v] == 0]
    for v in queue:
        alive[v] = False
    while queue:
        v = queue.pop()
        for u in preds[pred_off[v]:pred_off[v + 1]]:
            out_deg[u] -= 1
            if out_deg[u] == 0 and alive[u]:
                alive[u] = False
                queue.append(u)
    return np.array(alive, dtype=bool)


def inv_part(N: CellSet, F: GraphLike) -> CellSet:
    """
    N 内の不変部分 Inv(N, F)

    N 内に両側無限の道が通るセル = 無限の過去を持つセル ∩ 無限の未来を持つセル
    """
    g = _as_digraph(F)
    cells = N.indices
    if cells.size == 0:
        return CellSet()
    src, dst = _local_edges(cells, g.offsets, g.targets, g.failed)
    forward = _survivors(cells.size, src, dst)
    backward = _survivors(cells.size, dst, src)
    return CellSet._sorted(cells[forward & backward])


# ----------------------------------------------------------------------
# 指数対
# ----------------------------------------------------------------------
@dataclass
class IndexPair:
    """組合せ的指数対 P2 ⊆ P1 ⊆ N と不変部分 S"""

    N: CellSet
    P1: CellSet
    P2: CellSet
    S: CellSet
    exit_set: CellSet = field(default_factory=CellSet)

    def to_dict(self, include_cells: bool = True) -> dict:
        out = {
            "N_size": len(self.N),
            "P1_size": len(self.P1),
            "P2_size": len(self.P2),
            "S_size": len(self.S),
        }
        if include_cells:
            out.update(N=self.N.tolist(), P1=self.P1.tolist(), P2=self.P2.tolist(), S=self.S.tolist())
        return out


def _flow_successors(T: TubeMap, cells: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(owner 位置, 後続セル)。失敗セルは全セルへ写る"""
    owner, tgt = _gather_rows(T.flow_offsets, T.flow_targets, cells)
    bad = np.flatnonzero(T.failed_mask[cells])
    if bad.size:
        n = T.grid.n_cells
        owner = np.concatenate([owner, np.repeat(bad, n)])
        tgt = np.concatenate([tgt, np.tile(np.arange(n, dtype=np.int64), bad.size)])
    return owner, tgt


def _closure(seed: CellSet, within: np.ndarray, T: TubeMap) -> CellSet:
    """P ← seed ∪ (T(P) ∩ within) の最小不動点"""
    mask = np.zeros(T.grid.n_cells, dtype=bool)
    mask[seed.indices] = True
    frontier = seed.indices
    while frontier.size:
        _, succ = _flow_successors(T, frontier)
        succ = np.unique(succ)
        new = succ[within[succ] & ~mask[succ]]
        mask[new] = True
        frontier = new
    return CellSet._sorted(np.flatnonzero(mask))


def build_index_pair(N: CellSet, S: CellSet, T: TubeMap) -> IndexPair:
    """
    チューブ写像から指数対を作り、3 つの条件を検証する

    Args:
        N (CellSet): 孤立化近傍
        S (CellSet): N の不変部分（空でないこと）
        T (TubeMap): チューブ写像（開被覆 flow_cells を使う）

    Returns:
        IndexPair
    """
    if len(S) == 0:
        raise ValueError("不変部分 S が空です")
    if not S.issubset(N):
        raise ValueError("S ⊆ N が必要です")
    n = T.grid.n_cells
    in_N = np.zeros(n, dtype=bool)
    in_N[N.indices] = True

    P1 = _closure(S, in_N, T)
    cells = P1.indices
    owner, succ = _flow_successors(T, cells)
    leaves = np.zeros(cells.size, dtype=bool)
    np.logical_or.at(leaves, owner, ~in_N[succ])
    leaves |= T.tube_exits_mask[cells] | T.failed_mask[cells]
    E = CellSet._sorted(cells[leaves])

    in_P1 = np.zeros(n, dtype=bool)
    in_P1[cells] = True
    P2 = _closure(E, in_P1, T)

    pair = IndexPair(N, P1, P2, S, E)
    _check_pair(pair, T)
    logger.info(f"指数対: |N|={len(N)}, |P1|={len(P1)}, |P2|={len(P2)}, |S|={len(S)}")
    return pair


def _check_pair(pair: IndexPair, T: TubeMap):
    n = T.grid.n_cells
    in_N = np.zeros(n, dtype=bool)
    in_N[pair.N.indices] = True
    for name, P in (("P1", pair.P1), ("P2", pair.P2)):
        mask = np.zeros(n, dtype=bool)
        mask[P.indices] = True
        _, succ = _flow_successors(T, P.indices)
        assert not (in_N[succ] & ~mask[succ]).any(), f"{name} が N 内で正不変ではありません"
    assert pair.P2.issubset(pair.P1) and pair.P1.issubset(pair.N), "P2 ⊆ P1 ⊆ N が成り立ちません"
    assert pair.exit_set.issubset(pair.P2), "出口集合 E が P2 に含まれていません"

    if not pair.S.isdisjoint(pair.P2):
        raise InteriorConditionFailed(f"不変部分が P2 と {len(pair.S & pair.P2)} セル交わります")
    collar, _ = T.grid.dilate(pair.S, 1)
    if not collar.issubset(pair.N):
        raise InteriorConditionFailed("不変部分の 1 層の縁が N の内部に収まりません")


@dataclass
class ConleyIndex:
    """Morse 集合 1 個分の指数計算結果"""

    p: int
    collar: int
    pair: IndexPair
    homology: HomologyResult

    def to_dict(self, include_cells: bool = False) -> dict:
        out = {"set": self.p, "collar": self.collar}
        out.update(self.homology.to_dict())
        out["index_pair"] = self.pair.to_dict(include_cells)
        return out


def conley_index(md: MorseDecomposition, p: int, F: GraphLike, T: TubeMap,
                 collar: int = 2, retries: int = 3) -> ConleyIndex:
    """
    孤立化近傍 → 不変部分 → 指数対 → 相対ホモロジー

    内部条件が満たされなければ collar を 1 ずつ増やして最大 retries 回やり直す。
    他の Morse 集合との衝突ではすぐに止める。
    """
    last: Optional[ConleyError] = None
    for c in range(collar, collar + retries + 1):
        N = isolating_nbhd(md, p, c, T)
        S = inv_part(N, F)
        if len(S) == 0:
            last = InteriorConditionFailed(f"Morse 集合 {p}: 近傍の不変部分が空です")
            break
        try:
            pair = build_index_pair(N, S, T)
        except InteriorConditionFailed as e:
            logger.warning(f"Morse 集合 {p}: collar={c} で内部条件を満たしません（{e}）")
            last = e
            continue
        return ConleyIndex(p, c, pair, relative_homology(T.grid, pair.P1, pair.P2))
    raise last


# ----------------------------------------------------------------------
# 指数写像の Leray 簡約
# ----------------------------------------------------------------------
def _rational(value) -> sympy.Rational:
    return sympy.Rational(str(value))


@dataclass(frozen=True)
class Endomorphism:
    """
    次数付き有理数行列

    grading[q] は次元 q のブロックの大きさ（行列はブロック対角）
    """

    matrix: sympy.ImmutableMatrix
    grading: Tuple[int, ...]

    def __post_init__(self):
        rows, cols = self.matrix.shape
        if rows != cols:
            raise ValueError(f"正方行列ではありません: {self.matrix.shape}")
        if sum(self.grading) != rows or any(k < 0 for k in self.grading):
            raise ValueError(f"次数ブロック {self.grading} が行列の大きさ {rows} と合いません")

    @classmethod
    def from_matrix(cls, rows, grading: Optional[Sequence[int]] = None) -> "Endomorphism":
        m = sympy.ImmutableMatrix(rows).applyfunc(_rational)
        return cls(m, tuple(grading) if grading is not None else (m.shape[0],))

    @classmethod
    def from_blocks(cls, blocks: Sequence) -> "Endomorphism":
        mats = [sympy.Matrix(b).applyfunc(_rational) if len(b) else sympy.zeros(0, 0) for b in blocks]
        nonempty = [m for m in mats if m.shape[0]]
        full = sympy.diag(*nonempty) if nonempty else sympy.zeros(0, 0)
        return cls(sympy.ImmutableMatrix(full), tuple(m.shape[0] for m in mats))

    @classmethod
    def identity(cls, sizes: Sequence[int]) -> "Endomorphism":
        n = sum(sizes)
        return cls(sympy.ImmutableMatrix(sympy.eye(n)), tuple(sizes))

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def block(self, q: int) -> sympy.Matrix:
        start = sum(self.grading[:q])
        stop = start + self.grading[q]
        return sympy.Matrix(self.matrix[start:stop, start:stop])

    def charpoly(self) -> List[str]:
        """特性多項式の係数（最高次から、文字列）"""
        if self.dimension == 0:
            return ["1"]
        lam = sympy.Symbol("lambda")
        return [str(c) for c in self.matrix.charpoly(lam).all_coeffs()]


def _gker_basis(a: sympy.Matrix) -> List[sympy.Matrix]:
    """一般化核 {v : ∃n, αⁿv = 0} の基底（核の次元が安定する冪まで）"""
    n = a.shape[0]
    power = sympy.eye(n)
    basis: List[sympy.Matrix] = []
    for _ in range(n):
        power = power * a
        kernel = power.nullspace()
        if len(kernel) == len(basis):
            break
        basis = kernel
    return basis


def _complement(basis: List[sympy.Matrix], n: int) -> List[sympy.Matrix]:
    """basis を標準基底で補って全空間の基底にする"""
    chosen = list(basis)
    extra = []
    rank = len(chosen)
    for i in range(n):
        e = sympy.zeros(n, 1)
        e[i] = 1
        if sympy.Matrix.hstack(*(chosen + [e])).rank() > rank:
            chosen.append(e)
            extra.append(e)
            rank += 1
    return extra


def _leray_block(a: sympy.Matrix) -> sympy.Matrix:
    n = a.shape[0]
    if n == 0:
        return sympy.zeros(0, 0)
    kernel = _gker_basis(a)
    k = len(kernel)
    if k == n:
        return sympy.zeros(0, 0)
    q = sympy.Matrix.hstack(*(kernel + _complement(kernel, n)))
    conjugated = q.inv() * a * q
    assert conjugated[k:, :k].is_zero_matrix, "一般化核が不変部分空間になっていません"
    quotient = conjugated[k:, k:]

    m = quotient.shape[0]
    image = (quotient ** m).columnspace()
    if not image:
        return sympy.zeros(0, 0)
    if len(image) < m:
        b = sympy.Matrix.hstack(*image)
        quotient = (b.T * b).inv() * b.T * quotient * b
    assert quotient.det() != 0, "Leray 簡約の結果が自己同型ではありません"
    return quotient


def leray_reduce(a: Endomorphism) -> Endomorphism:
    """
    Leray 簡約 L(α)

    一般化核で割り、最終像に制限する。次数ブロックごとに行う。
    結果は（0 次元も含む）自己同型。
    """
    blocks = [_leray_block(a.block(q)) for q in range(len(a.grading))]
    nonempty = [b for b in blocks if b.shape[0]]
    full = sympy.diag(*nonempty) if nonempty else sympy.zeros(0, 0)
    reduced = Endomorphism(sympy.ImmutableMatrix(full), tuple(b.shape[0] for b in blocks))
    logger.info(f"Leray 簡約: 次元 {a.dimension} → {reduced.dimension}")
    return reduced


def gker_quotient_betti(h: HomologyResult, a: Optional[Endomorphism] = None) -> List[int]:
    """
    H / gker(I_P) の次元ごとの階数

    Args:
        h (HomologyResult): 相対ホモロジー
        a (Endomorphism): 指数写像（None なら恒等写像）

    Returns:
        list: 次元ごとの階数
    """
    if h.has_torsion:
        logger.warning(f"ねじれ係数 {h.torsion} は有理数係数の簡約では扱いません")
    if a is None:
        return list(h.betti)
    if tuple(a.grading) != tuple(h.betti):
        raise DimensionMismatch(f"次数ブロック {a.grading} がベッチ数 {h.betti} と一致しません")
    return [size - len(_gker_basis(a.block(q))) if size else 0 for q, size in enumerate(a.grading)]
