#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
立方体グリッドモジュール

矩形領域 X を各次元 k_i 等分した一様グリッド
- セル番号は多重添字 m、内部では行優先の線形番号
- 頂点座標は有理数で厳密に計算し、下向き/上向きに丸めた2系列を保持
- ボックスの閉被覆（cover）と開被覆（open_cover）
- セル集合 CellSet（ソート済み一意な int64 配列）
"""

import logging
import math
from fractions import Fraction
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from dynamics import MorsescopeError
from dynamics.interval import Interval, IvBox, norm2

logger = logging.getLogger(__name__)

# 開被覆で無視する丸め誤差の幅（セル幅に対する比）
OPEN_COVER_SLIVER = 1e-9


class GridError(MorsescopeError):
    """グリッドの基底例外"""


class OutOfRange(GridError):
    """範囲外のセル番号"""


def _to_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    return Fraction(str(value))


def _round_down(value: Fraction) -> float:
    f = float(value)
    return math.nextafter(f, -math.inf) if Fraction(f) > value else f


def _round_up(value: Fraction) -> float:
    f = float(value)
    return math.nextafter(f, math.inf) if Fraction(f) < value else f


class CellSet:
    """
    セル集合

    線形セル番号のソート済み一意配列。反復順は線形番号（= 多重添字の辞書式）順。
    """

    __slots__ = ("indices",)

    def __init__(self, indices: Iterable[int] = ()):
        arr = np.unique(np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices,
                                   dtype=np.int64))
        arr.setflags(write=False)
        object.__setattr__(self, "indices", arr)

    def __setattr__(self, name, value):
        raise AttributeError("CellSet は不変です")

    @classmethod
    def _sorted(cls, arr: np.ndarray) -> "CellSet":
        out = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.int64)
        arr.setflags(write=False)
        object.__setattr__(out, "indices", arr)
        return out

    def __len__(self):
        return int(self.indices.size)

    def __iter__(self):
        return iter(self.indices.tolist())

    def __contains__(self, cell) -> bool:
        pos = np.searchsorted(self.indices, cell)
        return bool(pos < self.indices.size and self.indices[pos] == cell)

    def contains_many(self, cells) -> np.ndarray:
        cells = np.asarray(cells, dtype=np.int64)
        pos = np.minimum(np.searchsorted(self.indices, cells), max(self.indices.size - 1, 0))
        if self.indices.size == 0:
            return np.zeros(cells.shape, dtype=bool)
        return self.indices[pos] == cells

    def __or__(self, other: "CellSet") -> "CellSet":
        return CellSet._sorted(np.union1d(self.indices, other.indices))

    def __and__(self, other: "CellSet") -> "CellSet":
        return CellSet._sorted(np.intersect1d(self.indices, other.indices, assume_unique=True))

    def __sub__(self, other: "CellSet") -> "CellSet":
        return CellSet._sorted(np.setdiff1d(self.indices, other.indices, assume_unique=True))

    def __eq__(self, other):
        if not isinstance(other, CellSet):
            return NotImplemented
        return bool(np.array_equal(self.indices, other.indices))

    __hash__ = None

    def issubset(self, other: "CellSet") -> bool:
        return bool(other.contains_many(self.indices).all())

    def isdisjoint(self, other: "CellSet") -> bool:
        return not other.contains_many(self.indices).any()

    def min(self) -> int:
        return int(self.indices[0])

    def tolist(self) -> List[int]:
        return self.indices.tolist()

    def __repr__(self):
        head = ", ".join(str(i) for i in self.indices[:8].tolist())
        more = ", ..." if len(self) > 8 else ""
        return f"CellSet([{head}{more}], n={len(self)})"


def union_all(sets: Iterable[CellSet]) -> CellSet:
    arrays = [s.indices for s in sets]
    if not arrays:
        return CellSet()
    return CellSet._sorted(np.unique(np.concatenate(arrays)))


class Grid:
    """
    一様立方体グリッド

    Args:
        domain: 各次元の (lo, hi)。文字列・有理数も可（10進表記のまま厳密に扱う）
        divisions: 各次元の分割数 k_i
    """

    def __init__(self, domain: Sequence[Tuple[object, object]], divisions: Sequence[int]):
        if len(domain) != len(divisions) or not domain:
            raise GridError(f"domain と divisions の次元が一致しません: {len(domain)} vs {len(divisions)}")
        self.bounds = tuple((_to_fraction(lo), _to_fraction(hi)) for lo, hi in domain)
        self.divisions = tuple(int(k) for k in divisions)
        for (lo, hi), k in zip(self.bounds, self.divisions):
            if k < 1:
                raise GridError(f"分割数は 1 以上です: {k}")
            if not lo < hi:
                raise GridError(f"領域が退化しています: [{lo}, {hi}]")
        self.dim = len(self.divisions)
        self.shape = self.divisions
        self.n_cells = int(np.prod(self.divisions, dtype=np.int64))
        self.cell_size = tuple((hi - lo) / k for (lo, hi), k in zip(self.bounds, self.divisions))

        # 頂点: vlo は下向き丸め、vhi は上向き丸め
        self._vlo, self._vhi = [], []
        for (lo, _), k, s in zip(self.bounds, self.divisions, self.cell_size):
            exact = [lo + j * s for j in range(k + 1)]
            self._vlo.append(np.array([_round_down(v) for v in exact]))
            self._vhi.append(np.array([_round_up(v) for v in exact]))

        self.domain = IvBox(Interval(v_lo[0], v_hi[-1]) for v_lo, v_hi in zip(self._vlo, self._vhi))
        # 領域の内側に確実に入る範囲（exits 判定用）
        self._inner_lo = np.array([v[0] for v in self._vhi])
        self._inner_hi = np.array([v[-1] for v in self._vlo])

    @classmethod
    def from_depth(cls, domain: Sequence[Tuple[object, object]], depth: int) -> "Grid":
        """各次元 2^depth 分割"""
        return cls(domain, [2 ** depth] * len(domain))

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return self.bounds == other.bounds and self.divisions == other.divisions

    def __hash__(self):
        return hash((self.bounds, self.divisions))

    def __repr__(self):
        dom = ", ".join(f"[{float(lo)}, {float(hi)}]" for lo, hi in self.bounds)
        return f"Grid({dom}; k={self.divisions})"

    def describe(self) -> dict:
        return {
            "domain": [[str(lo), str(hi)] for lo, hi in self.bounds],
            "divisions": list(self.divisions),
            "cell_size": [str(s) for s in self.cell_size],
        }

    # ------------------------------------------------------------------
    # 番号付け
    # ------------------------------------------------------------------
    def _check(self, m: Sequence[int]):
        if len(m) != self.dim or any(not 0 <= int(mi) < k for mi, k in zip(m, self.divisions)):
            raise OutOfRange(f"セル番号 {tuple(m)} は範囲外です（divisions={self.divisions}）")

    def linear_index(self, m: Sequence[int]) -> int:
        self._check(m)
        return int(np.ravel_multi_index(tuple(int(v) for v in m), self.shape))

    def linear_indices(self, multi: np.ndarray) -> np.ndarray:
        """(n, d) の多重添字 → 線形番号"""
        multi = np.asarray(multi, dtype=np.int64)
        return np.ravel_multi_index(tuple(multi.T), self.shape).astype(np.int64)

    def multi_index(self, cell: int) -> Tuple[int, ...]:
        if not 0 <= int(cell) < self.n_cells:
            raise OutOfRange(f"線形セル番号 {cell} は範囲外です（n_cells={self.n_cells}）")
        return tuple(int(v) for v in np.unravel_index(int(cell), self.shape))

    def multi_indices(self, cells) -> np.ndarray:
        cells = np.asarray(cells, dtype=np.int64)
        return np.stack(np.unravel_index(cells, self.shape), axis=-1).astype(np.int64)

    def all_cells(self) -> CellSet:
        return CellSet._sorted(np.arange(self.n_cells, dtype=np.int64))

    # ------------------------------------------------------------------
    # 実現
    # ------------------------------------------------------------------
    def cell_box(self, m) -> IvBox:
        """セル（多重添字または線形番号）の閉ボックス"""
        if isinstance(m, (int, np.integer)):
            m = self.multi_index(int(m))
        self._check(m)
        return IvBox(Interval(self._vlo[i][mi], self._vhi[i][mi + 1]) for i, mi in enumerate(m))

    def cell_bounds(self, cells) -> Tuple[np.ndarray, np.ndarray]:
        """線形番号の配列 → (n, d) の下端・上端"""
        multi = self.multi_indices(cells)
        lo = np.stack([self._vlo[i][multi[:, i]] for i in range(self.dim)], axis=-1)
        hi = np.stack([self._vhi[i][multi[:, i] + 1] for i in range(self.dim)], axis=-1)
        return lo, hi

    def diagonal_norm(self) -> float:
        """‖s‖ の上界"""
        sides = IvBox(Interval.exact(s) for s in self.cell_size)
        return float(norm2(sides).hi)

    def diagonal_interval(self) -> Interval:
        sides = IvBox(Interval.exact(s) for s in self.cell_size)
        return norm2(sides)

    # ------------------------------------------------------------------
    # 被覆
    # ------------------------------------------------------------------
    def cover_ranges(self, lo: np.ndarray, hi: np.ndarray):
        """
        バッチの閉被覆

        Args:
            lo, hi (np.ndarray): (n, d) のボックス端点

        Returns:
            (m_min, m_max, nonempty, exits): m_min/m_max は (n, d) の添字範囲（両端含む）
        """
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        m_min = np.empty(lo.shape, dtype=np.int64)
        m_max = np.empty(lo.shape, dtype=np.int64)
        for i in range(self.dim):
            right_edges = self._vhi[i][1:]
            left_edges = self._vlo[i][:-1]
            m_min[:, i] = np.searchsorted(right_edges, lo[:, i], side="left")
            m_max[:, i] = np.searchsorted(left_edges, hi[:, i], side="right") - 1
        nonempty = ((m_min <= m_max) & (m_min < np.array(self.divisions)) & (m_max >= 0)).all(axis=1)
        np.clip(m_min, 0, np.array(self.divisions) - 1, out=m_min)
        np.clip(m_max, 0, np.array(self.divisions) - 1, out=m_max)
        exits = ((lo < self._inner_lo) | (hi > self._inner_hi)).any(axis=1)
        return m_min, m_max, nonempty, exits

    def open_cover_ranges(self, lo: np.ndarray, hi: np.ndarray):
        """
        開被覆: 開セルとボックスの共通部分が丸め幅より厚いセル

        閉被覆から「面で接しているだけ」の隣接セルを除いたもの
        """
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        m_min = np.empty(lo.shape, dtype=np.int64)
        m_max = np.empty(lo.shape, dtype=np.int64)
        for i in range(self.dim):
            sliver = OPEN_COVER_SLIVER * float(self.cell_size[i])
            right_edges = self._vlo[i][1:]
            left_edges = self._vhi[i][:-1]
            m_min[:, i] = np.searchsorted(right_edges, lo[:, i] + sliver, side="right")
            m_max[:, i] = np.searchsorted(left_edges, hi[:, i] - sliver, side="left") - 1
        nonempty = ((m_min <= m_max) & (m_min < np.array(self.divisions)) & (m_max >= 0)).all(axis=1)
        np.clip(m_min, 0, np.array(self.divisions) - 1, out=m_min)
        np.clip(m_max, 0, np.array(self.divisions) - 1, out=m_max)
        return m_min, m_max, nonempty

    def expand_ranges(self, owner: np.ndarray, m_min: np.ndarray, m_max: np.ndarray):
        """
        添字範囲（直方体）を線形セル番号に展開する

        Returns:
            (owner_rep, cells): 各直方体の所有者を繰り返した配列と線形番号
        """
        owner = np.asarray(owner, dtype=np.int64)
        if owner.size == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        extent = m_max - m_min + 1
        counts = extent.prod(axis=1)
        total = int(counts.sum())
        rect = np.repeat(np.arange(owner.size), counts)
        starts = np.cumsum(counts) - counts
        local = np.arange(total, dtype=np.int64) - starts[rect]
        multi = np.empty((total, self.dim), dtype=np.int64)
        for i in reversed(range(self.dim)):
            ext = extent[rect, i]
            multi[:, i] = m_min[rect, i] + local % ext
            local //= ext
        return owner[rect], self.linear_indices(multi)

    def cover(self, b: IvBox) -> Tuple[CellSet, bool]:
        """ボックスと閉セルが交わるセル全体と、領域からはみ出すかどうか"""
        lo = np.array([[float(c.lo) for c in b]])
        hi = np.array([[float(c.hi) for c in b]])
        m_min, m_max, nonempty, exits = self.cover_ranges(lo, hi)
        if not nonempty[0]:
            return CellSet(), bool(exits[0])
        _, cells = self.expand_ranges(np.zeros(1), m_min, m_max)
        return CellSet._sorted(cells), bool(exits[0])

    def exits_domain(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        return self.cover_ranges(lo, hi)[3]

    # ------------------------------------------------------------------
    # 近傍
    # ------------------------------------------------------------------
    def to_mask(self, cells: CellSet) -> np.ndarray:
        mask = np.zeros(self.n_cells, dtype=bool)
        mask[cells.indices] = True
        return mask.reshape(self.shape)

    def from_mask(self, mask: np.ndarray) -> CellSet:
        return CellSet._sorted(np.flatnonzero(mask.reshape(-1)))

    def dilate(self, cells: CellSet, layers: int = 1) -> Tuple[CellSet, bool]:
        """
        頂点を共有するセルを layers 層分加える

        Returns:
            (dilated, clipped): clipped はグリッド外にはみ出した層があったか
        """
        mask = self.to_mask(cells)
        clipped = False
        if len(cells):
            multi = self.multi_indices(cells.indices)
            clipped = bool((multi.min(axis=0) < layers).any() or
                           (multi.max(axis=0) > np.array(self.divisions) - 1 - layers).any())
        for _ in range(layers):
            padded = np.pad(mask, 1)
            grown = np.zeros_like(mask)
            for offset in np.ndindex(*([3] * self.dim)):
                window = tuple(slice(o, o + k) for o, k in zip(offset, self.divisions))
                grown |= padded[window]
            mask = grown
        return self.from_mask(mask), clipped
