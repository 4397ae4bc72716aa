#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
組合せ的包含写像モジュール

グリッド上で時間刻み写像 φ_τ を包む多価写像 𝓕 と、
途中経過 φ_[0,τ] を包むチューブ写像 𝓣 を構築する
- 時間刻み戦略: Fixed(h) / Adaptive(D, delta) / Expression(tau)
- セルをチャンクに分け joblib.Parallel で並列に積分
- 像は CSR 形式（offsets/targets）で保持、失敗セルは「全セルへ写る」扱い
- joblib によるキャッシュ保存・読み込みと SHA-256 ダイジェスト
"""

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple, Union

import joblib
import numpy as np
from joblib import Parallel, delayed

from dynamics.grid import CellSet, Grid
from dynamics.integrator import FlowStatus, IntegratorConfig, endpoint_batch, tube_batch
from dynamics.interval import Interval, IntervalError, IvBox, norm2
from dynamics.vfield import Tape, VectorField, eval_interval, lie_series, parse_expr

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEFAULT_CHUNK_SIZE = 4096


# ----------------------------------------------------------------------
# 時間刻み戦略
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Fixed:
    """一定時間刻み h"""

    h: float

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"h は正である必要があります: {self.h}")

    def describe(self) -> dict:
        return {"kind": "fixed", "h": self.h}


@dataclass(frozen=True)
class Adaptive:
    """τ(x) = D‖s‖ / (‖v(x)‖ + δ)"""

    D: float = 4.0
    delta: float = 0.1

    def __post_init__(self):
        if not self.D > 1:
            raise ValueError(f"D は 1 より大きい必要があります: {self.D}")
        if not self.delta > 0:
            raise ValueError(f"delta は正である必要があります: {self.delta}")

    def describe(self) -> dict:
        return {"kind": "adaptive", "D": self.D, "delta": self.delta}


@dataclass(frozen=True)
class Expression:
    """ユーザー定義の時間刻み式 τ(x)（ベクトル場と同じ変数・パラメータを使う）"""

    tau: str

    def __post_init__(self):
        parse_expr(self.tau)

    def describe(self) -> dict:
        return {"kind": "expression", "tau": self.tau}


StepStrategy = Union[Fixed, Adaptive, Expression]


def strategy_from_dict(data: dict) -> StepStrategy:
    kind = data.get("kind")
    if kind == "fixed":
        return Fixed(float(data["h"]))
    if kind == "adaptive":
        return Adaptive(float(data.get("D", 4.0)), float(data.get("delta", 0.1)))
    if kind == "expression":
        return Expression(str(data["tau"]))
    raise ValueError(f"未知の時間刻み戦略: {kind}")


def _tau_enclosure(f: VectorField, g: Grid, st: StepStrategy, box: IvBox) -> Interval:
    if isinstance(st, Adaptive):
        speed = norm2(eval_interval(f, box))
        numerator = Interval.point(st.D) * g.diagonal_interval()
        return numerator / (speed + Interval.point(st.delta))
    if isinstance(st, Expression):
        tape = Tape([parse_expr(st.tau)], f.dim, f.param_values)
        return tape.run_interval(box)[0]
    raise TypeError(f"未知の時間刻み戦略: {st!r}")


def _tau_boxes(f: VectorField, g: Grid, st: StepStrategy, box: IvBox):
    """
    バッチ box 上の τ の包含

    区間演算の例外が起きた行、τ の下端が正でない行、上端が有限でない行は無効

    Returns:
        (t_lo, t_hi, valid): valid でない行は正の τ を保証できない
    """
    n = box.batch_shape[0]
    if isinstance(st, Fixed):
        return np.full(n, st.h), np.full(n, st.h), np.ones(n, dtype=bool)
    try:
        tau = _tau_enclosure(f, g, st, box)
    except IntervalError:
        if n == 1:
            return np.zeros(1), np.zeros(1), np.zeros(1, dtype=bool)
        parts = [_tau_boxes(f, g, st, box.take(slice(i, i + 1))) for i in range(n)]
        return tuple(np.concatenate(p) for p in zip(*parts))
    lo, hi = tau.lo.copy(), tau.hi.copy()
    valid = (lo > 0) & np.isfinite(hi)
    return np.where(valid, lo, 0.0), np.where(valid, hi, 0.0), valid


def tau_interval(f: VectorField, g: Grid, cell, st: StepStrategy) -> Interval:
    """
    セル ξ 上の τ(ξ) の包含

    Raises:
        ValueError: τ が正で有限であると保証できない
    """
    box = g.cell_box(cell)
    batch = IvBox(Interval(np.atleast_1d(c.lo), np.atleast_1d(c.hi)) for c in box)
    t_lo, t_hi, valid = _tau_boxes(f, g, st, batch)
    if not valid[0]:
        raise ValueError(f"セル {cell} で τ が正であることを保証できません")
    return Interval(t_lo[0], t_hi[0])


def tau_of_box(f: VectorField, box: IvBox, st: StepStrategy, g: Grid) -> Interval:
    """任意のボックス（点ボックス含む）上の τ の包含"""
    batch = IvBox(Interval(np.atleast_1d(c.lo), np.atleast_1d(c.hi)) for c in box)
    t_lo, t_hi, valid = _tau_boxes(f, g, st, batch)
    if not valid[0]:
        raise ValueError("τ が正であることを保証できません")
    return Interval(t_lo[0], t_hi[0])


# ----------------------------------------------------------------------
# CSR ユーティリティ
# ----------------------------------------------------------------------
def _csr(owner: np.ndarray, targets: np.ndarray, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """所有者順にソート済みの (owner, target) 対から offsets/targets を作る"""
    counts = np.bincount(owner, minlength=n) if owner.size else np.zeros(n, dtype=np.int64)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return offsets, np.asarray(targets, dtype=np.int64)


def _unique_pairs(owner: np.ndarray, cells: np.ndarray, n_cells: int):
    keys = np.unique(owner.astype(np.int64) * n_cells + cells)
    return keys // n_cells, keys % n_cells


def _chunks(n: int, chunk_size: int) -> List[np.ndarray]:
    return [np.arange(s, min(s + chunk_size, n), dtype=np.int64) for s in range(0, n, chunk_size)]


def _resolve_workers(workers: Optional[int]) -> int:
    if workers is None:
        workers = int(os.environ.get("MORSESCOPE_WORKERS", "1"))
    return max(1, int(workers))


def _header(kind: str, f: VectorField, g: Grid, st: StepStrategy, cfg: IntegratorConfig) -> dict:
    return {
        "format": f"morsescope-{kind}",
        "format_version": FORMAT_VERSION,
        "dimension": g.dim,
        "grid": g.describe(),
        "strategy": st.describe(),
        "integrator": cfg.as_dict(),
        "field": f.describe(),
    }


def _digest(header: dict, arrays: Sequence[np.ndarray]) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(header, sort_keys=True, ensure_ascii=True).encode("utf-8"))
    for arr in arrays:
        h.update(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    return h.hexdigest()


def _grid_from_header(header: dict) -> Grid:
    grid = header["grid"]
    bounds = [(Fraction(lo), Fraction(hi)) for lo, hi in grid["domain"]]
    return Grid(bounds, grid["divisions"])


# ----------------------------------------------------------------------
# 組合せ的包含写像 𝓕
# ----------------------------------------------------------------------
@dataclass
class CombinatorialMap:
    """
    φ_τ の組合せ的包含

    offsets/targets: 正常セルの像（CSR、各行はソート済み）
    status: FlowStatus コード（OK 以外は失敗 = 全セルへ写る）
    exits: 端点包含が領域 X からはみ出したか
    tau_lo/tau_hi: τ(ξ) の包含
    """

    grid: Grid
    header: dict
    offsets: np.ndarray
    targets: np.ndarray
    status: np.ndarray
    exits: np.ndarray
    tau_lo: np.ndarray
    tau_hi: np.ndarray

    @property
    def n_cells(self) -> int:
        return self.grid.n_cells

    @property
    def strategy(self) -> StepStrategy:
        return strategy_from_dict(self.header["strategy"])

    @property
    def failed_mask(self) -> np.ndarray:
        return self.status != FlowStatus.OK

    @property
    def n_failed(self) -> int:
        return int(self.failed_mask.sum())

    def row(self, cell: int) -> np.ndarray:
        """正常セルの像（失敗セルでは空配列）"""
        return self.targets[self.offsets[cell]:self.offsets[cell + 1]]

    def images(self, cell: int) -> CellSet:
        if self.status[cell] != FlowStatus.OK:
            return self.grid.all_cells()
        return CellSet._sorted(self.row(cell))

    def flag(self, cell: int) -> str:
        if self.status[cell] != FlowStatus.OK:
            return "failed"
        return "exits_domain" if self.exits[cell] else "ok"

    def tau(self, cell: int) -> Interval:
        return Interval(self.tau_lo[cell], self.tau_hi[cell])

    def failure_reasons(self) -> dict:
        codes, counts = np.unique(self.status[self.failed_mask], return_counts=True)
        return {FlowStatus(int(c)).reason: int(k) for c, k in zip(codes, counts)}

    def _arrays(self):
        return [self.status, self.exits.astype(np.uint8), self.tau_lo, self.tau_hi,
                self.offsets, self.targets]

    def digest(self) -> str:
        """直列化内容の SHA-256"""
        return _digest(self.header, self._arrays())

    def save(self, path: str) -> str:
        payload = {
            "header": self.header,
            "status": self.status,
            "exits": self.exits,
            "tau_lo": self.tau_lo,
            "tau_hi": self.tau_hi,
            "offsets": self.offsets,
            "targets": self.targets,
            "digest": self.digest(),
        }
        joblib.dump(payload, path, compress=3)
        logger.info(f"写像キャッシュを保存しました: {path}")
        return path

    @classmethod
    def load(cls, path: str) -> "CombinatorialMap":
        payload = joblib.load(path)
        header = payload["header"]
        if header.get("format") != "morsescope-map" or header.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"対応していない写像キャッシュ形式です: {header.get('format')} "
                             f"v{header.get('format_version')}")
        fmap = cls(_grid_from_header(header), header, payload["offsets"], payload["targets"],
                   payload["status"], payload["exits"], payload["tau_lo"], payload["tau_hi"])
        if fmap.digest() != payload["digest"]:
            raise ValueError(f"写像キャッシュのダイジェストが一致しません: {path}")
        logger.info(f"写像キャッシュを読み込みました: {path}")
        return fmap


def _map_chunk(f: VectorField, g: Grid, st: StepStrategy, cfg: IntegratorConfig,
               cells: np.ndarray):
    series = lie_series(f, cfg.taylor_order)
    lo, hi = g.cell_bounds(cells)
    t_lo, t_hi, tau_ok = _tau_boxes(f, g, st, IvBox.from_bounds(lo.T, hi.T))
    status = np.full(cells.size, FlowStatus.NONPOSITIVE_STEP, dtype=np.uint8)
    exits = np.zeros(cells.size, dtype=bool)
    run = np.flatnonzero(tau_ok)
    owner = np.zeros(0, dtype=np.int64)
    targets = np.zeros(0, dtype=np.int64)
    if run.size:
        flow = endpoint_batch(series, lo[run], hi[run], t_lo[run], t_hi[run], cfg)
        status[run] = flow.status
        good = flow.status == FlowStatus.OK
        ok = run[good]
        m_min, m_max, nonempty, out = g.cover_ranges(flow.endpoint_lo[good], flow.endpoint_hi[good])
        exits[ok] = out
        owner, targets = g.expand_ranges(cells[ok][nonempty], m_min[nonempty], m_max[nonempty])
    return status, exits, t_lo, t_hi, owner, targets


def build_map(f: VectorField, g: Grid, st: StepStrategy, cfg: Optional[IntegratorConfig] = None,
              workers: Optional[int] = None, chunk_size: int = DEFAULT_CHUNK_SIZE) -> CombinatorialMap:
    """
    組合せ的包含写像 𝓕 を構築する

    Args:
        f (VectorField): ベクトル場
        g (Grid): グリッド
        st (StepStrategy): 時間刻み戦略
        cfg (IntegratorConfig): 積分器設定
        workers (int): 並列数（None なら MORSESCOPE_WORKERS、既定 1）
        chunk_size (int): 1 タスクあたりのセル数

    Returns:
        CombinatorialMap: セルごとの像・フラグ・τ 包含
    """
    cfg = cfg or IntegratorConfig()
    workers = _resolve_workers(workers)
    lie_series(f, cfg.taylor_order)
    chunks = _chunks(g.n_cells, chunk_size)
    logger.info(f"包含写像を構築: {g.n_cells} セル, {len(chunks)} チャンク, 並列数 {workers}")
    results = Parallel(n_jobs=workers)(delayed(_map_chunk)(f, g, st, cfg, c) for c in chunks)

    status = np.concatenate([r[0] for r in results])
    exits = np.concatenate([r[1] for r in results])
    tau_lo = np.concatenate([r[2] for r in results])
    tau_hi = np.concatenate([r[3] for r in results])
    owner = np.concatenate([r[4] for r in results])
    targets = np.concatenate([r[5] for r in results])
    offsets, targets = _csr(owner, targets, g.n_cells)
    fmap = CombinatorialMap(g, _header("map", f, g, st, cfg), offsets, targets,
                            status, exits, tau_lo, tau_hi)
    if fmap.n_failed:
        logger.warning(f"積分に失敗したセル: {fmap.n_failed}/{g.n_cells} {fmap.failure_reasons()}")
    logger.info(f"包含写像の構築完了: 辺数 {targets.size}")
    return fmap


# ----------------------------------------------------------------------
# チューブ写像 𝓣
# ----------------------------------------------------------------------
@dataclass
class TubeMap:
    """
    φ_[0,τ] の組合せ的包含

    tube_*: チューブ片の閉被覆（判定基準 (B) 用）
    flow_*: チューブ片の開被覆（面で接するだけのセルを除く、指数対用）
    """

    grid: Grid
    header: dict
    tube_offsets: np.ndarray
    tube_targets: np.ndarray
    flow_offsets: np.ndarray
    flow_targets: np.ndarray
    tube_exits_mask: np.ndarray
    status: np.ndarray
    t_hi: np.ndarray

    @property
    def failed_mask(self) -> np.ndarray:
        return self.status != FlowStatus.OK

    def tube_row(self, cell: int) -> np.ndarray:
        return self.tube_targets[self.tube_offsets[cell]:self.tube_offsets[cell + 1]]

    def flow_row(self, cell: int) -> np.ndarray:
        return self.flow_targets[self.flow_offsets[cell]:self.flow_offsets[cell + 1]]

    def tube_cells(self, cell: int) -> CellSet:
        if self.status[cell] != FlowStatus.OK:
            return self.grid.all_cells()
        return CellSet._sorted(self.tube_row(cell))

    def flow_cells(self, cell: int) -> CellSet:
        if self.status[cell] != FlowStatus.OK:
            return self.grid.all_cells()
        return CellSet._sorted(self.flow_row(cell))

    def tube_exits(self, cell: int) -> bool:
        return bool(self.tube_exits_mask[cell])

    def flag(self, cell: int) -> str:
        if self.status[cell] != FlowStatus.OK:
            return "failed"
        return "exits_domain" if self.tube_exits_mask[cell] else "ok"

    def digest(self) -> str:
        return _digest(self.header, [self.status, self.tube_exits_mask.astype(np.uint8), self.t_hi,
                                     self.tube_offsets, self.tube_targets,
                                     self.flow_offsets, self.flow_targets])


def _tube_chunk(f: VectorField, g: Grid, st: StepStrategy, cfg: IntegratorConfig,
                cells: np.ndarray):
    series = lie_series(f, cfg.taylor_order)
    lo, hi = g.cell_bounds(cells)
    _, t_hi, tau_ok = _tau_boxes(f, g, st, IvBox.from_bounds(lo.T, hi.T))
    status = np.full(cells.size, FlowStatus.NONPOSITIVE_STEP, dtype=np.uint8)
    exits = np.zeros(cells.size, dtype=bool)
    empty = np.zeros(0, dtype=np.int64)
    closed = (empty, empty)
    opened = (empty, empty)
    run = np.flatnonzero(tau_ok)
    if run.size:
        flow = tube_batch(series, lo[run], hi[run], t_hi[run], cfg)
        status[run] = flow.status
        good_run = flow.status == FlowStatus.OK
        keep = good_run[flow.seg_owner]
        seg_cell = cells[run][flow.seg_owner[keep]]
        seg_lo, seg_hi = flow.seg_lo[keep], flow.seg_hi[keep]

        m_min, m_max, nonempty, out = g.cover_ranges(seg_lo, seg_hi)
        local = np.searchsorted(cells, seg_cell)
        np.logical_or.at(exits, local, out)
        own, tgt = g.expand_ranges(seg_cell[nonempty], m_min[nonempty], m_max[nonempty])
        closed = _unique_pairs(own, tgt, g.n_cells)

        o_min, o_max, o_nonempty = g.open_cover_ranges(seg_lo, seg_hi)
        own, tgt = g.expand_ranges(seg_cell[o_nonempty], o_min[o_nonempty], o_max[o_nonempty])
        ok_cells = cells[run][good_run]
        own = np.concatenate([own, ok_cells])
        tgt = np.concatenate([tgt, ok_cells])
        opened = _unique_pairs(own, tgt, g.n_cells)
    return status, exits, t_hi, closed, opened


def build_tube_map(f: VectorField, g: Grid, st: StepStrategy, cfg: Optional[IntegratorConfig] = None,
                   workers: Optional[int] = None, chunk_size: int = DEFAULT_CHUNK_SIZE) -> TubeMap:
    """
    チューブ写像 𝓣 を構築する（各セルで [0, sup τ(ξ)] を積分）

    Returns:
        TubeMap: 閉被覆・開被覆・はみ出しフラグ
    """
    cfg = cfg or IntegratorConfig()
    workers = _resolve_workers(workers)
    lie_series(f, cfg.taylor_order)
    chunks = _chunks(g.n_cells, chunk_size)
    logger.info(f"チューブ写像を構築: {g.n_cells} セル, {len(chunks)} チャンク, 並列数 {workers}")
    results = Parallel(n_jobs=workers)(delayed(_tube_chunk)(f, g, st, cfg, c) for c in chunks)

    status = np.concatenate([r[0] for r in results])
    exits = np.concatenate([r[1] for r in results])
    t_hi = np.concatenate([r[2] for r in results])
    c_own = np.concatenate([r[3][0] for r in results])
    c_tgt = np.concatenate([r[3][1] for r in results])
    o_own = np.concatenate([r[4][0] for r in results])
    o_tgt = np.concatenate([r[4][1] for r in results])
    tube_offsets, tube_targets = _csr(c_own, c_tgt, g.n_cells)
    flow_offsets, flow_targets = _csr(o_own, o_tgt, g.n_cells)
    tmap = TubeMap(g, _header("tube", f, g, st, cfg), tube_offsets, tube_targets,
                   flow_offsets, flow_targets, exits, status, t_hi)
    failed = int(tmap.failed_mask.sum())
    if failed:
        logger.warning(f"チューブ積分に失敗したセル: {failed}/{g.n_cells}")
    logger.info(f"チューブ写像の構築完了: 閉被覆の辺数 {tube_targets.size}, 開被覆の辺数 {flow_targets.size}")
    return tmap
