#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
相対立方体ホモロジーモジュール

セル集合の対 (P1, P2) の相対鎖複体を組み立て、整数係数の
Smith 標準形からベッチ数とねじれ係数を求める

面は「2 倍座標」で表す: セル m の面は 2m + {0,1,2}^d、奇数座標の数が次元
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from dynamics.grid import CellSet, Grid

logger = logging.getLogger(__name__)

SparseMatrix = Dict[int, Dict[int, int]]  # 列 → {行: 係数}


@dataclass(frozen=True)
class HomologyResult:
    """相対ホモロジーのベッチ数と次元ごとのねじれ係数"""

    betti: Tuple[int, ...]
    torsion: Tuple[Tuple[int, ...], ...]

    @property
    def has_torsion(self) -> bool:
        return any(self.torsion)

    def euler_characteristic(self) -> int:
        return sum((-1) ** q * b for q, b in enumerate(self.betti))

    def to_dict(self) -> dict:
        return {"betti": list(self.betti), "torsion": [list(t) for t in self.torsion]}


def cell_faces(shape: Tuple[int, ...], multi: np.ndarray) -> np.ndarray:
    """セル群（(n, d) の多重添字）の全ての面の符号（ソート済み一意）"""
    d = len(shape)
    if multi.size == 0:
        return np.zeros(0, dtype=np.int64)
    doubled = tuple(2 * k + 1 for k in shape)
    offsets = np.array(list(np.ndindex(*([3] * d))), dtype=np.int64)
    coords = (2 * multi[:, None, :] + offsets[None, :, :]).reshape(-1, d)
    return np.unique(np.ravel_multi_index(tuple(coords.T), doubled)).astype(np.int64)


class RelativeComplex:
    """
    相対立方体鎖複体 C(P1) / C(P2)

    生成元は P1 の面のうち P2 の面でないもの
    """

    def __init__(self, shape: Tuple[int, ...], p1_multi: np.ndarray, p2_multi: np.ndarray):
        self.shape = tuple(shape)
        self.dim = len(shape)
        self.doubled = tuple(2 * k + 1 for k in shape)
        faces = np.setdiff1d(cell_faces(self.shape, p1_multi), cell_faces(self.shape, p2_multi),
                             assume_unique=True)
        coords = np.stack(np.unravel_index(faces, self.doubled), axis=-1) if faces.size else \
            np.zeros((0, self.dim), dtype=np.int64)
        dims = (coords % 2).sum(axis=1)
        self.generators: List[np.ndarray] = [faces[dims == q] for q in range(self.dim + 1)]

    def counts(self) -> List[int]:
        return [int(g.size) for g in self.generators]

    def boundary_entries(self, q: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        ∂_q: C_q → C_{q-1} の非零成分

        Returns:
            (col, row, coeff): 列は q 次元生成元、行は q-1 次元生成元の番号
        """
        cols_out, rows_out, vals_out = [], [], []
        src = self.generators[q]
        dst = self.generators[q - 1]
        if src.size == 0 or dst.size == 0:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, empty
        coords = np.stack(np.unravel_index(src, self.doubled), axis=-1).astype(np.int64)
        odd = coords % 2
        before = np.cumsum(odd, axis=1) - odd
        col_ids = np.arange(src.size, dtype=np.int64)
        for j in range(self.dim):
            mask = odd[:, j] == 1
            if not mask.any():
                continue
            sign = np.where(before[mask, j] % 2 == 0, 1, -1)
            for shift, factor in ((1, 1), (-1, -1)):
                face = coords[mask].copy()
                face[:, j] += shift
                codes = np.ravel_multi_index(tuple(face.T), self.doubled)
                pos = np.searchsorted(dst, codes)
                pos_c = np.minimum(pos, dst.size - 1)
                present = dst[pos_c] == codes
                cols_out.append(col_ids[mask][present])
                rows_out.append(pos_c[present])
                vals_out.append((sign * factor)[present])
        return (np.concatenate(cols_out), np.concatenate(rows_out),
                np.concatenate(vals_out).astype(np.int64))

    def boundary(self, q: int) -> SparseMatrix:
        cols, rows, vals = self.boundary_entries(q)
        matrix: SparseMatrix = {}
        for c, r, v in zip(cols.tolist(), rows.tolist(), vals.tolist()):
            matrix.setdefault(c, {})[r] = v
        return matrix


# ----------------------------------------------------------------------
# 疎行列の Smith 標準形（Python 整数による厳密計算）
# ----------------------------------------------------------------------
class _SparseSNF:
    """列・行の両方向の辞書で保持した整数行列の消去"""

    def __init__(self, columns: SparseMatrix):
        self.cols: SparseMatrix = {}
        self.rows: SparseMatrix = {}
        for c, entries in columns.items():
            for r, v in entries.items():
                if v:
                    self.cols.setdefault(c, {})[r] = v
                    self.rows.setdefault(r, {})[c] = v

    def _set(self, r: int, c: int, v: int):
        if v:
            self.cols.setdefault(c, {})[r] = v
            self.rows.setdefault(r, {})[c] = v
        else:
            col = self.cols.get(c)
            if col is not None and r in col:
                del col[r]
                if not col:
                    del self.cols[c]
            row = self.rows.get(r)
            if row is not None and c in row:
                del row[c]
                if not row:
                    del self.rows[r]

    def _col_op(self, target: int, source: int, factor: int):
        """列 target -= factor * 列 source"""
        for r, w in list(self.cols.get(source, {}).items()):
            self._set(r, target, self.cols.get(target, {}).get(r, 0) - factor * w)

    def _row_op(self, target: int, source: int, factor: int):
        """行 target -= factor * 行 source"""
        for c, w in list(self.rows.get(source, {}).items()):
            self._set(target, c, self.rows.get(target, {}).get(c, 0) - factor * w)

    def _drop(self, r: int, c: int):
        for c2 in list(self.rows.get(r, {})):
            self._set(r, c2, 0)
        for r2 in list(self.cols.get(c, {})):
            self._set(r2, c, 0)

    def _unit_pass(self) -> int:
        """単元ピボットをすべて消去し、その個数を返す"""
        found = 0
        progress = True
        while progress:
            progress = False
            for c in list(self.cols):
                col = self.cols.get(c)
                if not col:
                    continue
                units = [r for r, v in col.items() if v in (1, -1)]
                if not units:
                    continue
                r = min(units, key=lambda x: (len(self.rows[x]), x))
                v = col[r]
                for c2, a in list(self.rows[r].items()):
                    if c2 != c:
                        self._col_op(c2, c, a * v)
                self._drop(r, c)
                found += 1
                progress = True
        return found

    def _general_pass(self) -> List[int]:
        diagonal = []
        while self.cols:
            r, c, v = min(((r, c, v) for c, col in self.cols.items() for r, v in col.items()),
                          key=lambda e: (abs(e[2]), e[1], e[0]))
            while True:
                for r2, a in list(self.cols.get(c, {}).items()):
                    if r2 != r:
                        self._row_op(r2, r, a // v)
                for c2, a in list(self.rows.get(r, {}).items()):
                    if c2 != c:
                        self._col_op(c2, c, a // v)
                leftovers = [(r2, c, a) for r2, a in self.cols.get(c, {}).items() if r2 != r]
                leftovers += [(r, c2, a) for c2, a in self.rows.get(r, {}).items() if c2 != c]
                if not leftovers:
                    break
                r, c, v = min(leftovers, key=lambda e: (abs(e[2]), e[1], e[0]))
            diagonal.append(abs(v))
            self._drop(r, c)
        return diagonal

    def invariant_factors(self) -> List[int]:
        units = self._unit_pass()
        rest = self._general_pass()
        return [1] * units + _normalize(rest)


def _normalize(diagonal: List[int]) -> List[int]:
    """対角成分を割り切り列 d_1 | d_2 | ... に並べ替える"""
    d = sorted(x for x in diagonal if x)
    for i in range(len(d)):
        for j in range(i + 1, len(d)):
            g = math.gcd(d[i], d[j])
            if g != d[i]:
                d[i], d[j] = g, d[i] * d[j] // g
    return sorted(d)


def smith_invariants(columns: SparseMatrix) -> List[int]:
    """疎整数行列の不変因子（非零のもの、昇順）"""
    return _SparseSNF(columns).invariant_factors()


def relative_homology(g: Grid, P1: CellSet, P2: CellSet) -> HomologyResult:
    """
    H(|P1|, |P2|) を整数係数で計算する

    Args:
        g (Grid): グリッド
        P1, P2 (CellSet): P2 ⊆ P1

    Returns:
        HomologyResult: 次元 0..d のベッチ数とねじれ係数
    """
    if not P2.issubset(P1):
        raise ValueError("P2 ⊆ P1 が必要です")
    cx = RelativeComplex(g.shape, g.multi_indices(P1.indices), g.multi_indices(P2.indices))
    counts = cx.counts()
    d = cx.dim
    ranks = [0] * (d + 2)
    torsion: List[Tuple[int, ...]] = [()] * (d + 1)
    for q in range(1, d + 1):
        factors = smith_invariants(cx.boundary(q))
        ranks[q] = len(factors)
        torsion[q - 1] = tuple(x for x in factors if x > 1)
    betti = tuple(counts[q] - ranks[q] - ranks[q + 1] for q in range(d + 1))

    euler_cells = sum((-1) ** q * n for q, n in enumerate(counts))
    euler_betti = sum((-1) ** q * b for q, b in enumerate(betti))
    assert euler_cells == euler_betti, f"オイラー標数が一致しません: {euler_cells} vs {euler_betti}"
    assert all(b >= 0 for b in betti), f"負のベッチ数: {betti}"
    logger.info(f"相対ホモロジー: 生成元 {counts}, ベッチ数 {betti}")
    return HomologyResult(betti, tuple(torsion))


def export_complex(g: Grid, P1: CellSet, P2: CellSet) -> str:
    """
    相対鎖複体をテキストで書き出す

    1 行 1 生成元: "次元 面符号 : ±境界面符号 ..."（面符号は 2 倍座標の行優先番号）
    """
    cx = RelativeComplex(g.shape, g.multi_indices(P1.indices), g.multi_indices(P2.indices))
    lines = [
        "# morsescope relative cubical complex v1",
        f"# doubled_shape {' '.join(str(k) for k in cx.doubled)}",
        f"# generators {' '.join(str(n) for n in cx.counts())}",
    ]
    for q in range(cx.dim + 1):
        boundary = cx.boundary(q) if q > 0 else {}
        below = cx.generators[q - 1] if q > 0 else None
        for col, code in enumerate(cx.generators[q].tolist()):
            terms = sorted(boundary.get(col, {}).items())
            rendered = " ".join(f"{'+' if v > 0 else '-'}{int(below[r])}" for r, v in terms)
            lines.append(f"{q} {code} : {rendered}".rstrip())
    return "\n".join(lines) + "\n"
