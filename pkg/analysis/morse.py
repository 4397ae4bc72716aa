#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Morse 分解モジュール

組合せ的写像の有向グラフから
- 強連結成分（Tarjan 法、明示スタックによる反復実装）
- 非自明な成分 = Morse 集合
- 凝縮 DAG 上の到達可能性（ビット集合を逆トポロジカル順に伝播）
- 推移簡約した Morse グラフと DOT 出力
- 偽 Morse 集合の集計（spurious_census）
を求める。積分に失敗したセルは仮想ハブ経由で全セルへ辺を持つ。
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from dynamics.enclosure import CombinatorialMap
from dynamics.grid import CellSet, Grid

logger = logging.getLogger(__name__)

DEFAULT_MAX_GRAPH_SETS = 20000


@dataclass
class Digraph:
    """
    CSR 形式の有向グラフ

    failed[v] が真の頂点は全頂点へ辺を持つとみなす（辺は展開しない）
    """

    n: int
    offsets: np.ndarray
    targets: np.ndarray
    failed: np.ndarray
    grid: Optional[Grid] = None

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Tuple[int, int]],
                   failed: Optional[Iterable[int]] = None) -> "Digraph":
        pairs = np.array(sorted(set((int(a), int(b)) for a, b in edges)), dtype=np.int64).reshape(-1, 2)
        counts = np.bincount(pairs[:, 0], minlength=n) if pairs.size else np.zeros(n, dtype=np.int64)
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        mask = np.zeros(n, dtype=bool)
        if failed is not None:
            mask[list(failed)] = True
        return cls(n, offsets, pairs[:, 1].copy(), mask)

    @classmethod
    def from_map(cls, fmap: CombinatorialMap) -> "Digraph":
        return cls(fmap.n_cells, fmap.offsets, fmap.targets, fmap.failed_mask, fmap.grid)

    def successors(self, v: int) -> np.ndarray:
        if self.failed[v]:
            return np.arange(self.n, dtype=np.int64)
        return self.targets[self.offsets[v]:self.offsets[v + 1]]


GraphLike = Union[Digraph, CombinatorialMap]


def _as_digraph(obj: GraphLike) -> Digraph:
    if isinstance(obj, Digraph):
        return obj
    return Digraph.from_map(obj)


def _bits(x: int) -> Iterator[int]:
    while x:
        low = x & -x
        yield low.bit_length() - 1
        x ^= low


@dataclass
class Condensation:
    """強連結成分分解の結果（成分番号は Tarjan の出力順 = 逆トポロジカル順）"""

    graph: Digraph
    comp_of: np.ndarray        # 頂点（+ハブ）→ 成分番号
    components: List[List[int]]
    nontrivial: List[bool]
    offsets: np.ndarray        # 拡張グラフの CSR
    targets: np.ndarray
    has_hub: bool

    def morse_components(self) -> List[int]:
        """非自明な成分の番号（最小メンバー順）"""
        hub = self.graph.n
        picked = [c for c, ok in enumerate(self.nontrivial) if ok]
        return sorted(picked, key=lambda c: min(v for v in self.components[c] if v != hub))

    def morse_sets(self) -> List[CellSet]:
        hub = self.graph.n
        return [CellSet(np.array([v for v in self.components[c] if v != hub], dtype=np.int64))
                for c in self.morse_components()]


def _extended_csr(g: Digraph) -> Tuple[np.ndarray, np.ndarray, bool]:
    """失敗頂点 → ハブ → 全頂点 の辺を加えた CSR"""
    if not g.failed.any():
        return g.offsets, g.targets, False
    n = g.n
    counts = np.diff(g.offsets)
    owners = np.repeat(np.arange(n, dtype=np.int64), counts)
    failed_nodes = np.flatnonzero(g.failed)
    owners = np.concatenate([owners, failed_nodes, np.full(n, n, dtype=np.int64)])
    targets = np.concatenate([g.targets, np.full(failed_nodes.size, n, dtype=np.int64),
                              np.arange(n, dtype=np.int64)])
    order = np.argsort(owners, kind="stable")
    owners, targets = owners[order], targets[order]
    offsets = np.zeros(n + 2, dtype=np.int64)
    np.cumsum(np.bincount(owners, minlength=n + 1), out=offsets[1:])
    return offsets, targets, True


def condense(obj: GraphLike) -> Condensation:
    """反復版 Tarjan 法による強連結成分分解"""
    g = _as_digraph(obj)
    offsets_arr, targets_arr, has_hub = _extended_csr(g)
    n_total = g.n + (1 if has_hub else 0)
    off = offsets_arr.tolist()
    tg = targets_arr.tolist()

    index = [-1] * n_total
    low = [0] * n_total
    on_stack = [False] * n_total
    comp_of = [-1] * n_total
    stack: List[int] = []
    components: List[List[int]] = []
    counter = 0

    for root in range(n_total):
        if index[root] != -1:
            continue
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        call = [[root, off[root]]]
        while call:
            frame = call[-1]
            v, ptr = frame
            if ptr < off[v + 1]:
                w = tg[ptr]
                frame[1] = ptr + 1
                if index[w] == -1:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    call.append([w, off[w]])
                elif on_stack[w] and index[w] < low[v]:
                    low[v] = index[w]
                continue
            call.pop()
            if call:
                u = call[-1][0]
                if low[v] < low[u]:
                    low[u] = low[v]
            if low[v] == index[v]:
                members = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp_of[w] = len(components)
                    members.append(w)
                    if w == v:
                        break
                components.append(members)

    nontrivial = []
    for members in components:
        if len(members) > 1:
            nontrivial.append(True)
        else:
            v = members[0]
            row = tg[off[v]:off[v + 1]]
            nontrivial.append(v in row)
    return Condensation(g, np.array(comp_of, dtype=np.int64), components, nontrivial,
                        offsets_arr, targets_arr, has_hub)


def spurious_census(sets: Sequence[CellSet]) -> Dict[str, object]:
    """
    Morse 集合の大きさの集計

    Returns:
        dict: count, singleton_fraction, histogram（大きさ → 個数）
    """
    sizes = pd.Series([len(s) for s in sets], dtype="int64")
    if sizes.empty:
        return {"count": 0, "singleton_fraction": 0.0, "histogram": {}}
    histogram = sizes.value_counts().sort_index()
    return {
        "count": int(sizes.size),
        "singleton_fraction": float((sizes == 1).mean()),
        "histogram": {int(k): int(v) for k, v in histogram.items()},
    }


@dataclass
class MorseDecomposition:
    """Morse 集合と Morse グラフ"""

    sets: List[CellSet]
    edges: List[Tuple[int, int]]
    reach: Optional[List[int]]
    n_vertices: int
    grid: Optional[Grid] = None
    graph_skipped: bool = False
    failed_in_sets: List[int] = field(default_factory=list)
    cell_to_set: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.cell_to_set is None:
            inverse = np.full(self.n_vertices, -1, dtype=np.int64)
            for p, s in enumerate(self.sets):
                inverse[s.indices] = p
            self.cell_to_set = inverse
        if not self.failed_in_sets:
            self.failed_in_sets = [0] * len(self.sets)

    def set_of(self, cell: int) -> Optional[int]:
        p = int(self.cell_to_set[cell])
        return None if p < 0 else p

    def reachable(self, p: int, q: int) -> bool:
        if self.reach is None:
            raise ValueError("Morse グラフは計算されていません")
        return bool((self.reach[p] >> q) & 1)

    def reachability_edges(self) -> List[Tuple[int, int]]:
        if self.reach is None:
            return []
        return [(p, q) for p, bits in enumerate(self.reach) for q in _bits(bits)]

    def census(self) -> Dict[str, object]:
        return spurious_census(self.sets)


def _graph(cond: Condensation, morse_comps: List[int]):
    """
    凝縮 DAG 上で Morse 集合間の到達可能性を計算する

    Returns:
        (reach, direct): Morse 集合ごとのビット集合
    """
    n_comp = len(cond.components)
    comp_of = cond.comp_of
    counts = np.diff(cond.offsets)
    src = comp_of[np.repeat(np.arange(counts.size, dtype=np.int64), counts)]
    dst = comp_of[cond.targets]
    cross = src != dst
    keys = np.unique(src[cross] * n_comp + dst[cross])
    e_src, e_dst = keys // n_comp, keys % n_comp
    succ_off = np.zeros(n_comp + 1, dtype=np.int64)
    np.cumsum(np.bincount(e_src, minlength=n_comp), out=succ_off[1:])
    succ = e_dst.tolist()
    succ_off = succ_off.tolist()
    pending = np.bincount(e_dst, minlength=n_comp).tolist()

    label = [-1] * n_comp
    for p, c in enumerate(morse_comps):
        label[c] = p
    reach: List[Optional[int]] = [0] * n_comp
    direct: List[Optional[int]] = [0] * n_comp
    morse_reach = [0] * len(morse_comps)
    morse_direct = [0] * len(morse_comps)

    # Tarjan の出力順では後続成分が先に確定している
    for c in range(n_comp):
        r = 0
        d = 0
        for s in succ[succ_off[c]:succ_off[c + 1]]:
            ps = label[s]
            if ps >= 0:
                bit = 1 << ps
                r |= bit | reach[s]
                d |= bit
            else:
                r |= reach[s]
                d |= direct[s]
            pending[s] -= 1
            if pending[s] == 0:
                reach[s] = None
                direct[s] = None
        reach[c] = r
        direct[c] = d
        if label[c] >= 0:
            morse_reach[label[c]] = r
            morse_direct[label[c]] = d
    return morse_reach, morse_direct


def _reduce(reach: List[int], direct: List[int]) -> List[Tuple[int, int]]:
    edges = []
    for p, d in enumerate(direct):
        covered = 0
        for q in _bits(d):
            covered |= reach[q]
        edges.extend((p, q) for q in _bits(d & ~covered))
    return sorted(edges)


def decompose(obj: GraphLike, max_graph_sets: int = DEFAULT_MAX_GRAPH_SETS) -> MorseDecomposition:
    """
    Morse 集合と Morse グラフを一度の強連結成分分解で求める

    Args:
        obj: CombinatorialMap または Digraph
        max_graph_sets (int): これを超える Morse 集合数ではグラフ計算を省略

    Returns:
        MorseDecomposition
    """
    cond = condense(obj)
    g = cond.graph
    comps = cond.morse_components()
    sets = cond.morse_sets()
    logger.info(f"強連結成分 {len(cond.components)} 個, Morse 集合 {len(sets)} 個")

    failed_in_sets = [int(g.failed[s.indices].sum()) for s in sets]
    for p, k in enumerate(failed_in_sets):
        if k:
            logger.warning(f"Morse 集合 {p} に積分失敗セルが {k} 個含まれています（力学的解釈は無効）")

    if len(sets) > max_graph_sets:
        logger.warning(f"Morse 集合が {len(sets)} 個（上限 {max_graph_sets}）のため Morse グラフを省略します")
        return MorseDecomposition(sets, [], None, g.n, g.grid, True, failed_in_sets)

    reach, direct = _graph(cond, comps)
    for p, r in enumerate(reach):
        assert not (r >> p) & 1, f"Morse グラフに閉路があります（集合 {p}）"
    edges = _reduce(reach, direct)
    return MorseDecomposition(sets, edges, reach, g.n, g.grid, False, failed_in_sets)


def morse_sets(obj: GraphLike) -> List[CellSet]:
    """辺を含む強連結成分（自己ループ付きの単一セルを含む）を最小メンバー順に返す"""
    return condense(obj).morse_sets()


def morse_graph(obj: GraphLike, sets: Sequence[CellSet]) -> List[Tuple[int, int]]:
    """
    Morse グラフ（推移簡約した辺リスト）

    sets は morse_sets(obj) の結果であること
    """
    cond = condense(obj)
    if [s.tolist() for s in cond.morse_sets()] != [s.tolist() for s in sets]:
        raise ValueError("sets がこのグラフの Morse 集合と一致しません")
    reach, direct = _graph(cond, cond.morse_components())
    return _reduce(reach, direct)


def to_dot(md: MorseDecomposition, name: str = "morse") -> str:
    """Morse グラフの DOT 表現（推移簡約した辺のみ）"""
    lines = [f"digraph {name} {{", "  node [shape=ellipse, fontname=\"Helvetica\"];"]
    for p, s in enumerate(md.sets):
        lines.append(f"  {p} [label=\"N{p}\\n{len(s)} cells\"];")
    for p, q in md.edges:
        lines.append(f"  {p} -> {q};")
    if md.graph_skipped:
        lines.append("  // graph skipped: too many Morse sets")
    lines.append("}")
    return "\n".join(lines) + "\n"
