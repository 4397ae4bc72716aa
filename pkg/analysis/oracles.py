#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
参照アルゴリズム（総当たり）

自己診断とテストで高速版と突き合わせるための、別経路の素朴な実装
- 強連結成分: 真偽値行列の推移閉包
- 不変部分: 長さ |N| の道の有無（行列のべき）
- 相対ホモロジー: 区間の積で表した基本立方体と sympy の密な Smith 標準形
- 参照軌道: 固定刻みの古典的 Runge-Kutta 法（精度保証なし）
"""

import itertools
import logging
from typing import Dict, List, Sequence, Tuple

import numpy as np
import sympy
from sympy.matrices.normalforms import smith_normal_form
from sympy.polys.domains import ZZ

from dynamics.enclosure import CombinatorialMap
from dynamics.grid import CellSet, Grid
from dynamics.vfield import VectorField, eval_real
from analysis.homology import HomologyResult

logger = logging.getLogger(__name__)

Cube = Tuple[Tuple[int, int], ...]


# ----------------------------------------------------------------------
# グラフ
# ----------------------------------------------------------------------
def _closure(adj: np.ndarray) -> np.ndarray:
    """長さ 1 以上の道による到達可能性"""
    reach = adj.astype(bool)
    while True:
        grown = reach | ((reach.astype(np.int64) @ reach.astype(np.int64)) > 0)
        if (grown == reach).all():
            return reach
        reach = grown


def adjacency(n: int, edges: Sequence[Tuple[int, int]]) -> np.ndarray:
    adj = np.zeros((n, n), dtype=bool)
    for a, b in edges:
        adj[a, b] = True
    return adj


def brute_force_morse_sets(adj: np.ndarray) -> List[List[int]]:
    """自分に戻る道を持つ頂点を相互到達可能性で分類（最小メンバー順）"""
    reach = _closure(adj)
    mutual = reach & reach.T
    sets, seen = [], set()
    for v in range(adj.shape[0]):
        if reach[v, v] and v not in seen:
            members = sorted(int(w) for w in np.flatnonzero(mutual[v]))
            seen.update(members)
            sets.append(members)
    return sets


def brute_force_morse_graph(adj: np.ndarray, sets: List[List[int]]) -> List[Tuple[int, int]]:
    """Morse 集合間の到達関係を推移簡約したもの"""
    reach = _closure(adj)
    k = len(sets)
    rel = np.zeros((k, k), dtype=bool)
    for p, q in itertools.permutations(range(k), 2):
        rel[p, q] = bool(reach[sets[p][0], sets[q][0]])
    edges = []
    for p, q in itertools.permutations(range(k), 2):
        if rel[p, q] and not any(rel[p, r] and rel[r, q] for r in range(k) if r not in (p, q)):
            edges.append((p, q))
    return sorted(edges)


def brute_force_inv_part(adj: np.ndarray, N: Sequence[int]) -> List[int]:
    """N 内で長さ |N| の道が v で終わり、かつ v から始まる頂点"""
    cells = sorted(N)
    if not cells:
        return []
    sub = adj[np.ix_(cells, cells)].astype(np.int64)
    power = np.linalg.matrix_power(sub, len(cells)) > 0
    into = power.any(axis=0)
    out_of = power.any(axis=1)
    return [c for c, a, b in zip(cells, into, out_of) if a and b]


# ----------------------------------------------------------------------
# ホモロジー
# ----------------------------------------------------------------------
def _cell_cubes(m: Sequence[int]) -> List[Cube]:
    choices = [((a, a), (a + 1, a + 1), (a, a + 1)) for a in m]
    return [tuple(c) for c in itertools.product(*choices)]


def _cube_dim(q: Cube) -> int:
    return sum(1 for a, b in q if b > a)


def _cube_boundary(q: Cube) -> Dict[Cube, int]:
    out: Dict[Cube, int] = {}
    seen = 0
    for j, (a, b) in enumerate(q):
        if b == a:
            continue
        sign = -1 if seen % 2 else 1
        upper = q[:j] + ((b, b),) + q[j + 1:]
        lower = q[:j] + ((a, a),) + q[j + 1:]
        out[upper] = out.get(upper, 0) + sign
        out[lower] = out.get(lower, 0) - sign
        seen += 1
    return out


def _dense_factors(matrix: np.ndarray) -> List[int]:
    if matrix.size == 0 or not matrix.any():
        return []
    snf = smith_normal_form(sympy.Matrix(matrix.tolist()), domain=ZZ)
    diag = [abs(int(snf[i, i])) for i in range(min(snf.shape))]
    return sorted(d for d in diag if d)


def brute_force_homology(multi_p1: Sequence[Sequence[int]],
                         multi_p2: Sequence[Sequence[int]], dim: int) -> HomologyResult:
    """
    多重添字で与えたセル対の相対ホモロジー（密行列）

    Args:
        multi_p1, multi_p2: セルの多重添字のリスト
        dim (int): 空間次元
    """
    faces_p1 = {q for m in multi_p1 for q in _cell_cubes(m)}
    faces_p2 = {q for m in multi_p2 for q in _cell_cubes(m)}
    gens = [sorted(q for q in faces_p1 - faces_p2 if _cube_dim(q) == k) for k in range(dim + 1)]
    index = [{q: i for i, q in enumerate(g)} for g in gens]

    ranks = [0] * (dim + 2)
    torsion: List[Tuple[int, ...]] = [()] * (dim + 1)
    for k in range(1, dim + 1):
        matrix = np.zeros((len(gens[k - 1]), len(gens[k])), dtype=np.int64)
        for col, q in enumerate(gens[k]):
            for face, coeff in _cube_boundary(q).items():
                row = index[k - 1].get(face)
                if row is not None:
                    matrix[row, col] += coeff
        factors = _dense_factors(matrix)
        ranks[k] = len(factors)
        torsion[k - 1] = tuple(x for x in factors if x > 1)
    betti = tuple(len(gens[k]) - ranks[k] - ranks[k + 1] for k in range(dim + 1))
    return HomologyResult(betti, tuple(torsion))


def brute_force_relative_homology(g: Grid, P1: CellSet, P2: CellSet) -> HomologyResult:
    return brute_force_homology(g.multi_indices(P1.indices).tolist(),
                                g.multi_indices(P2.indices).tolist(), g.dim)


# ----------------------------------------------------------------------
# 参照軌道
# ----------------------------------------------------------------------
def reference_flow(f: VectorField, x0, t, steps: int = 400) -> np.ndarray:
    """
    固定刻み RK4 による φ(t, x0)

    Args:
        f (VectorField): ベクトル場
        x0: (d,) または (n, d) の初期点
        t: スカラーまたは点ごとの (n,) の時間
        steps (int): 刻み数

    Returns:
        np.ndarray: x0 と同じ形の終点
    """
    x = np.array(x0, dtype=np.float64)
    h = (np.asarray(t, dtype=np.float64) / steps)
    if x.ndim == 2:
        h = np.broadcast_to(h, x.shape[:1])[:, None]
    for _ in range(steps):
        k1 = eval_real(f, x)
        k2 = eval_real(f, x + 0.5 * h * k1)
        k3 = eval_real(f, x + 0.5 * h * k2)
        k4 = eval_real(f, x + h * k3)
        x = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def enclosure_violations(f: VectorField, fmap: CombinatorialMap, samples: int = 10000,
                         seed: int = 0, steps: int = 400, tol: float = 1e-9) -> Dict[str, int]:
    """
    モンテカルロによる包含写像の健全性検査

    正常セルから点を抜き出し、参照軌道の φ_τ(x) が X 内にあれば
    その点の近傍セルのいずれかが像に含まれることを確かめる

    Returns:
        dict: checked（X 内に残った標本数）と violations
    """
    rng = np.random.default_rng(seed)
    g = fmap.grid
    ok_cells = np.flatnonzero(~fmap.failed_mask)
    if ok_cells.size == 0:
        return {"checked": 0, "violations": 0}
    cells = rng.choice(ok_cells, size=samples)
    lo, hi = g.cell_bounds(cells)
    x = lo + rng.random(lo.shape) * (hi - lo)
    t = 0.5 * (fmap.tau_lo[cells] + fmap.tau_hi[cells])
    y = reference_flow(f, x, t, steps)

    m_min, m_max, nonempty, _ = g.cover_ranges(y - tol, y + tol)
    inside = nonempty & ~g.exits_domain(y, y)
    checked = violations = 0
    for i in np.flatnonzero(inside):
        _, near = g.expand_ranges(np.zeros(1, dtype=np.int64), m_min[i:i + 1], m_max[i:i + 1])
        checked += 1
        if not fmap.images(int(cells[i])).contains_many(near).any():
            violations += 1
            logger.error(f"包含違反: セル {int(cells[i])}, x={x[i].tolist()}, φ={y[i].tolist()}")
    return {"checked": checked, "violations": violations}


def closed_form_linear(lambdas: Sequence[float], x0, t) -> np.ndarray:
    """x' = diag(λ) x の厳密解"""
    return np.asarray(x0, dtype=np.float64) * np.exp(np.asarray(lambdas, dtype=np.float64) * t)


def closed_form_circle(x0, t) -> np.ndarray:
    """circle_demo（極座標で r' = r(1 - r²), θ' = 1）の厳密解"""
    x0 = np.asarray(x0, dtype=np.float64)
    r0 = np.hypot(x0[..., 0], x0[..., 1])
    theta = np.arctan2(x0[..., 1], x0[..., 0]) + t
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(r0 > 0, 1.0 / np.sqrt(1.0 + (1.0 / r0 ** 2 - 1.0) * np.exp(-2.0 * t)), 0.0)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)
