#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
精度保証付き積分モジュール

区間 Taylor 法による流れ φ(t,·) の包含
- Picard 反復による粗い包含 B（ξ + [0,h]·v(B) ⊆ B）
- Lie 微分による Taylor 展開（剰余項は B 上で評価）
- 端点の包含（flow_endpoint）とチューブ φ([0,t],ξ) の包含（flow_tube）
- 多数のボックスをまとめて処理するバッチ核（integrate_batch）

刻みは到達時刻によらない列 H·2^-j から選び、最後の刻みだけ途中の時刻で評価する。
そのため時刻 t までの刻みの列は t' > t までの刻みの列の先頭部分になる。
"""

import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction
from typing import List, Optional, Tuple

import numpy as np

from dynamics import MorsescopeError
from dynamics.interval import Interval, IntervalError, IvBox
from dynamics.vfield import LieSeries, VectorField, lie_series

logger = logging.getLogger(__name__)

_INFLATE_ABS = 1e-12


class IntegrationError(MorsescopeError):
    """積分の基底例外"""


class ValidationFailed(IntegrationError):
    """Picard 反復で粗い包含を検証できなかった"""


class IntegrationFailed(IntegrationError):
    """積分失敗（reason に理由コード）"""

    def __init__(self, reason: str, message: str = ""):
        super().__init__(message or f"積分に失敗しました: {reason}")
        self.reason = reason


class FlowStatus(IntEnum):
    """セル単位の積分結果コード"""

    OK = 0
    BLOWUP_SUSPECTED = 1
    SUBSTEP_BUDGET_EXHAUSTED = 2
    UNBOUNDED_INTERVAL = 3
    NONPOSITIVE_STEP = 4

    @property
    def reason(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class IntegratorConfig:
    """
    積分器の設定

    max_step は刻みの上限（チューブでは t / tube_segments も上限になる）
    remainder_abs_tol / remainder_rel_tol は Taylor 剰余項の幅の上限
    （超えたステップは半分にしてやり直す）
    """

    taylor_order: int = 3
    max_substeps: int = 10_000
    max_step: float = 0.25
    inflation: float = 1.5
    max_picard_iters: int = 30
    min_step: float = 1e-12
    blowup_bound: float = 1e8
    tube_segments: int = 4
    remainder_abs_tol: float = 1e-9
    remainder_rel_tol: float = 1e-4

    def __post_init__(self):
        if not 1 <= self.taylor_order <= 5:
            raise ValueError(f"taylor_order は 1〜5 です: {self.taylor_order}")
        if self.inflation <= 1.0:
            raise ValueError(f"inflation は 1 より大きい必要があります: {self.inflation}")
        for name in ("max_substeps", "max_step", "max_picard_iters", "min_step", "blowup_bound",
                     "tube_segments", "remainder_abs_tol", "remainder_rel_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} は正である必要があります: {getattr(self, name)}")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class FlowEnclosure:
    """単一ボックスの積分結果"""

    endpoint: Optional[IvBox]
    tube: List[IvBox] = field(default_factory=list)
    status: FlowStatus = FlowStatus.OK

    @property
    def ok(self) -> bool:
        return self.status == FlowStatus.OK

    def tube_hull(self) -> IvBox:
        hull = self.tube[0]
        for seg in self.tube[1:]:
            hull = hull.hull(seg)
        return hull


@dataclass
class BatchFlow:
    """
    バッチ積分結果

    endpoint_lo/hi: (n, d)。status が OK 以外の行は意味を持たない
    seg_owner/seg_lo/seg_hi: チューブ片（記録した場合のみ）
    """

    endpoint_lo: np.ndarray
    endpoint_hi: np.ndarray
    status: np.ndarray
    seg_owner: np.ndarray
    seg_lo: np.ndarray
    seg_hi: np.ndarray

    def endpoint(self, i: int) -> IvBox:
        return IvBox.from_bounds(self.endpoint_lo[i], self.endpoint_hi[i])

    def segments(self, i: int) -> List[IvBox]:
        rows = np.flatnonzero(self.seg_owner == i)
        return [IvBox.from_bounds(self.seg_lo[r], self.seg_hi[r]) for r in rows]


def _box(lo: np.ndarray, hi: np.ndarray) -> IvBox:
    """(n, d) の端点配列からバッチ IvBox を作る"""
    return IvBox.from_bounds(lo.T, hi.T)


def _inflate(lo: np.ndarray, hi: np.ndarray, factor: float) -> Tuple[np.ndarray, np.ndarray]:
    with np.errstate(invalid="ignore", over="ignore"):
        pad = (factor - 1.0) * 0.5 * (hi - lo) + _INFLATE_ABS * (1.0 + np.maximum(np.abs(lo), np.abs(hi)))
        return np.nextafter(lo - pad, -np.inf), np.nextafter(hi + pad, np.inf)


def _picard(series: LieSeries, x_lo, x_hi, h, cfg: IntegratorConfig):
    """
    Picard 反復による粗い包含

    Returns:
        (B_lo, B_hi, valid): valid の行では ξ + [0,h]·v(B) ⊆ B
    """
    n = x_lo.shape[0]
    X = _box(x_lo, x_hi)
    T = Interval(np.zeros(n), h)
    first = X.components
    fx = series.field(X)
    start = IvBox(xi + T * fi for xi, fi in zip(first, fx))
    b_lo, b_hi = _inflate(start.lo(), start.hi(), cfg.inflation)

    out_lo = np.full_like(x_lo, np.nan)
    out_hi = np.full_like(x_hi, np.nan)
    valid = np.zeros(n, dtype=bool)
    active = np.arange(n)
    for _ in range(cfg.max_picard_iters):
        Xa = _box(x_lo[active], x_hi[active])
        Ba = _box(b_lo, b_hi)
        Ta = Interval(np.zeros(active.size), h[active])
        fb = series.field(Ba)
        Bn = IvBox(xi + Ta * fi for xi, fi in zip(Xa, fb))
        bad = Bn.is_unbounded() | (Bn.mag() > cfg.blowup_bound)
        inside = Bn.subset(Ba) & ~bad
        hit = active[inside]
        out_lo[hit] = Bn.lo()[inside]
        out_hi[hit] = Bn.hi()[inside]
        valid[hit] = True
        keep = ~inside & ~bad
        if not keep.any():
            break
        grown = Ba.hull(Bn).take(keep)
        b_lo, b_hi = _inflate(grown.lo(), grown.hi(), cfg.inflation)
        active = active[keep]
    return out_lo, out_hi, valid


_FACTORIAL_INV = [Interval.exact(Fraction(1, math.factorial(k))) for k in range(8)]


def _taylor_step(series: LieSeries, x_lo, x_hi, b_lo, b_hi, h, tau_lo, tau_hi):
    """
    区間 Taylor ステップ

    係数と剰余項は刻み h の Picard 包含 B 上で評価し、
    到達時刻 τ ∈ [tau_lo, tau_hi] ⊆ [0, h] の値を包む。
    端点は直接評価と平均値形式 T(m) + J_T(X)(X - m) の共通部分

    Returns:
        (end_lo, end_hi, tube_lo, tube_hi, sweep_lo, sweep_hi, remainder_width)
        tube は [0, tau_hi]、sweep は刻み全体 [0, h] の包含
    """
    n = x_lo.shape[0]
    X = _box(x_lo, x_hi)
    B = _box(b_lo, b_hi)
    coeffs = series.coefficients(X)
    rem = series.remainder(B)
    p = series.order
    zero = np.zeros(n)
    mid = np.clip(0.5 * x_lo + 0.5 * x_hi, x_lo, x_hi)
    M = _box(mid, mid)
    mid_coeffs = series.coefficients(M)
    jac = series.jacobians(X)
    offset = [X[j] - Interval(mid[:, j]) for j in range(series.dim)]
    reach_pows = [Interval(tau_lo, tau_hi).pow_int(k) for k in range(p + 2)]
    span_pows = [Interval(zero, tau_hi).pow_int(k) for k in range(p + 2)]
    sweep_pows = [Interval(zero, h).pow_int(k) for k in range(p + 2)]
    step_rem = Interval(h).pow_int(p + 1)

    end, tube, sweep = [], [], []
    rem_width = np.zeros(n)
    for i in range(series.dim):
        e = t = w = X[i]
        c = M[i]
        grads = [Interval(np.full(n, 1.0 if j == i else 0.0)) for j in range(series.dim)]
        for k in range(1, p + 1):
            ck = _FACTORIAL_INV[k] * coeffs[k - 1][i]
            e = e + reach_pows[k] * ck
            t = t + span_pows[k] * ck
            w = w + sweep_pows[k] * ck
            a = reach_pows[k] * _FACTORIAL_INV[k]
            c = c + a * mid_coeffs[k - 1][i]
            grads = [g + a * jac[k - 1][i][j] for j, g in enumerate(grads)]
        for g, dx in zip(grads, offset):
            c = c + g * dx
        cr = _FACTORIAL_INV[p + 1] * rem[i]
        rem_width = np.maximum(rem_width, (step_rem * cr).width())
        tail = reach_pows[p + 1] * cr
        end.append((e + tail).intersect(c + tail).intersect(B[i]))
        tube.append((t + span_pows[p + 1] * cr).intersect(B[i]))
        sweep.append((w + sweep_pows[p + 1] * cr).intersect(B[i]))
    end_box, tube_box, sweep_box = IvBox(end), IvBox(tube), IvBox(sweep)
    return (end_box.lo(), end_box.hi(), tube_box.lo(), tube_box.hi(),
            sweep_box.lo(), sweep_box.hi(), rem_width)


def _integrate_core(series: LieSeries, x_lo, x_hi, t, cfg: IntegratorConfig,
                    min_segments: int, record_tube: bool):
    """到達時刻 t（行ごと）までのバッチ積分"""
    n, d = x_lo.shape
    state_lo = np.array(x_lo, dtype=np.float64)
    state_hi = np.array(x_hi, dtype=np.float64)
    status = np.zeros(n, dtype=np.uint8)
    finished = np.zeros(n, dtype=bool)
    elapsed_lo = np.zeros(n)
    elapsed_hi = np.zeros(n)
    level = np.zeros(n, dtype=np.int64)
    count = np.zeros(n, dtype=np.int64)
    base = np.full(n, cfg.max_step)
    if min_segments > 1:
        base = np.minimum(base, t / min_segments)
    owners, seg_los, seg_his = [], [], []

    unbounded = ~np.isfinite(state_lo).all(axis=1) | ~np.isfinite(state_hi).all(axis=1)
    status[unbounded] = FlowStatus.UNBOUNDED_INTERVAL
    zero_time = (t <= 0) & ~unbounded
    finished[zero_time] = True
    if record_tube and zero_time.any():
        owners.append(np.flatnonzero(zero_time))
        seg_los.append(state_lo[zero_time])
        seg_his.append(state_hi[zero_time])

    active = np.flatnonzero((status == FlowStatus.OK) & ~finished)
    while active.size:
        lvl = level[active]
        h = np.ldexp(base[active], -lvl.astype(np.int32))
        tiny = h < cfg.min_step
        status[active[tiny]] = FlowStatus.BLOWUP_SUSPECTED
        active, lvl, h = active[~tiny], lvl[~tiny], h[~tiny]
        if not active.size:
            break

        target = t[active]
        last = np.nextafter(elapsed_lo[active] + h, -np.inf) >= target
        tau_hi = np.where(last, np.minimum(h, np.nextafter(target - elapsed_lo[active], np.inf)), h)
        tau_lo = np.where(last, np.maximum(0.0, np.nextafter(target - elapsed_hi[active], -np.inf)), h)

        b_lo, b_hi, valid = _picard(series, state_lo[active], state_hi[active], h, cfg)
        accepted = np.zeros(active.size, dtype=bool)
        if valid.any():
            rows = np.flatnonzero(valid)
            idx = active[rows]
            e_lo, e_hi, s_lo, s_hi, w_lo, w_hi, rem_w = _taylor_step(
                series, state_lo[idx], state_hi[idx], b_lo[rows], b_hi[rows],
                h[rows], tau_lo[rows], tau_hi[rows])
            width = (state_hi[idx] - state_lo[idx]).max(axis=1)
            tol = np.maximum(cfg.remainder_abs_tol, cfg.remainder_rel_tol * width)
            good = rem_w <= tol
            ok_rows, ok_idx = rows[good], idx[good]
            accepted[ok_rows] = True
            state_lo[ok_idx] = e_lo[good]
            state_hi[ok_idx] = e_hi[good]
            elapsed_lo[ok_idx] = np.nextafter(elapsed_lo[ok_idx] + h[ok_rows], -np.inf)
            elapsed_hi[ok_idx] = np.nextafter(elapsed_hi[ok_idx] + h[ok_rows], np.inf)
            finished[ok_idx] = last[ok_rows]
            count[ok_idx] += 1
            if record_tube:
                owners.append(ok_idx)
                seg_los.append(s_lo[good])
                seg_his.append(s_hi[good])

            # 判定は刻み全体の包含で行う（到達時刻によらない）
            w_lo, w_hi = w_lo[good], w_hi[good]
            finite = np.isfinite(w_lo).all(axis=1) & np.isfinite(w_hi).all(axis=1)
            status[ok_idx[~finite]] = FlowStatus.UNBOUNDED_INTERVAL
            mags = np.maximum(np.abs(w_lo), np.abs(w_hi)).max(axis=1)
            status[ok_idx[mags > cfg.blowup_bound]] = FlowStatus.BLOWUP_SUSPECTED

        level[active] = np.where(accepted, np.maximum(lvl - 1, 0), lvl + 1)
        status[active[(count[active] > cfg.max_substeps) & (status[active] == FlowStatus.OK)]] = \
            FlowStatus.SUBSTEP_BUDGET_EXHAUSTED

        active = active[(status[active] == FlowStatus.OK) & ~finished[active]]

    if owners:
        seg_owner = np.concatenate(owners)
        seg_lo = np.concatenate(seg_los)
        seg_hi = np.concatenate(seg_his)
    else:
        seg_owner = np.zeros(0, dtype=np.int64)
        seg_lo = np.zeros((0, d))
        seg_hi = np.zeros((0, d))
    return BatchFlow(state_lo, state_hi, status, seg_owner, seg_lo, seg_hi)


def _concat(results: List[BatchFlow], offsets: List[int]) -> BatchFlow:
    return BatchFlow(
        np.concatenate([r.endpoint_lo for r in results]),
        np.concatenate([r.endpoint_hi for r in results]),
        np.concatenate([r.status for r in results]),
        np.concatenate([r.seg_owner + off for r, off in zip(results, offsets)]),
        np.concatenate([r.seg_lo for r in results]),
        np.concatenate([r.seg_hi for r in results]),
    )


def integrate_batch(series: LieSeries, x_lo, x_hi, t, cfg: IntegratorConfig,
                    min_segments: int = 1, record_tube: bool = False) -> BatchFlow:
    """
    バッチ積分（区間演算の例外が起きたら1行ずつに分けて再実行する）

    Args:
        series (LieSeries): lie_series(f, cfg.taylor_order)
        x_lo, x_hi (np.ndarray): (n, d) の初期ボックス
        t (np.ndarray): (n,) の到達時刻（0 以上）
        min_segments (int): チューブを最低何片に分けるか
        record_tube (bool): チューブ片を記録するか

    Returns:
        BatchFlow: 行ごとの端点・状態コード・チューブ片
    """
    x_lo = np.atleast_2d(np.asarray(x_lo, dtype=np.float64))
    x_hi = np.atleast_2d(np.asarray(x_hi, dtype=np.float64))
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    try:
        return _integrate_core(series, x_lo, x_hi, t, cfg, min_segments, record_tube)
    except IntervalError as e:
        n, d = x_lo.shape
        if n == 1:
            failed = BatchFlow(x_lo.copy(), x_hi.copy(),
                               np.array([FlowStatus.UNBOUNDED_INTERVAL], dtype=np.uint8),
                               np.zeros(0, dtype=np.int64), np.zeros((0, d)), np.zeros((0, d)))
            return failed
        logger.info(f"区間演算の例外（{e}）のため {n} 行を個別に積分し直します")
        parts = [integrate_batch(series, x_lo[i:i + 1], x_hi[i:i + 1], t[i:i + 1], cfg,
                                 min_segments, record_tube) for i in range(n)]
        return _concat(parts, list(range(n)))


def _hull_by_owner(owner: np.ndarray, lo: np.ndarray, hi: np.ndarray, n: int):
    out_lo = np.full((n, lo.shape[1]), np.inf)
    out_hi = np.full((n, hi.shape[1]), -np.inf)
    np.minimum.at(out_lo, owner, lo)
    np.maximum.at(out_hi, owner, hi)
    return out_lo, out_hi


def endpoint_batch(series: LieSeries, x_lo, x_hi, t_lo, t_hi, cfg: IntegratorConfig,
                   record_tube: bool = False) -> BatchFlow:
    """
    区間時刻 [t_lo, t_hi] での端点包含

    t_lo まで積分し、そこから幅 t_hi - t_lo のチューブ片の和で端点を包む
    """
    x_lo = np.atleast_2d(np.asarray(x_lo, dtype=np.float64))
    x_hi = np.atleast_2d(np.asarray(x_hi, dtype=np.float64))
    t_lo = np.asarray(t_lo, dtype=np.float64).reshape(-1)
    t_hi = np.asarray(t_hi, dtype=np.float64).reshape(-1)
    first = integrate_batch(series, x_lo, x_hi, t_lo, cfg, record_tube=record_tube)
    spread = np.nextafter(t_hi - t_lo, np.inf) * (t_hi > t_lo)
    need = np.flatnonzero((first.status == FlowStatus.OK) & (spread > 0))
    if not need.size:
        return first

    second = integrate_batch(series, first.endpoint_lo[need], first.endpoint_hi[need],
                             spread[need], cfg, record_tube=True)
    end_lo, end_hi = first.endpoint_lo.copy(), first.endpoint_hi.copy()
    h_lo, h_hi = _hull_by_owner(second.seg_owner, second.seg_lo, second.seg_hi, need.size)
    ok = second.status == FlowStatus.OK
    end_lo[need[ok]] = h_lo[ok]
    end_hi[need[ok]] = h_hi[ok]
    status = first.status.copy()
    status[need] = second.status
    owner, seg_lo, seg_hi = first.seg_owner, first.seg_lo, first.seg_hi
    if record_tube:
        owner = np.concatenate([owner, need[second.seg_owner]])
        seg_lo = np.concatenate([seg_lo, second.seg_lo])
        seg_hi = np.concatenate([seg_hi, second.seg_hi])
    return BatchFlow(end_lo, end_hi, status, owner, seg_lo, seg_hi)


def tube_batch(series: LieSeries, x_lo, x_hi, t_hi, cfg: IntegratorConfig) -> BatchFlow:
    """[0, t_hi] のチューブ包含（cfg.tube_segments 片以上）"""
    return integrate_batch(series, x_lo, x_hi, t_hi, cfg,
                           min_segments=cfg.tube_segments, record_tube=True)


# ----------------------------------------------------------------------
# 単一ボックス API
# ----------------------------------------------------------------------
def _bounds(xi: IvBox) -> Tuple[np.ndarray, np.ndarray]:
    return (np.array([[float(c.lo) for c in xi]]), np.array([[float(c.hi) for c in xi]]))


def rough_enclosure(f: VectorField, xi: IvBox, t_hi: float,
                    cfg: Optional[IntegratorConfig] = None) -> IvBox:
    """
    φ([0,t_hi], ξ) の粗い包含 B を Picard 反復で求める

    Raises:
        ValidationFailed: max_picard_iters 回の膨張でも検証できない
    """
    if t_hi <= 0:
        raise ValueError(f"t_hi は正である必要があります: {t_hi}")
    cfg = cfg or IntegratorConfig()
    series = lie_series(f, cfg.taylor_order)
    lo, hi = _bounds(xi)
    try:
        b_lo, b_hi, valid = _picard(series, lo, hi, np.array([t_hi], dtype=np.float64), cfg)
    except IntervalError as e:
        raise ValidationFailed(f"粗い包含の評価で区間演算が失敗しました: {e}") from e
    if not valid[0]:
        raise ValidationFailed(f"{cfg.max_picard_iters} 回の反復で粗い包含を検証できません（t={t_hi}）")
    return IvBox.from_bounds(b_lo[0], b_hi[0])


def _single(result: BatchFlow) -> FlowEnclosure:
    status = FlowStatus(int(result.status[0]))
    if status != FlowStatus.OK:
        raise IntegrationFailed(status.reason)
    return FlowEnclosure(result.endpoint(0), result.segments(0), status)


def flow_endpoint(f: VectorField, xi: IvBox, t_iv: Interval,
                  cfg: Optional[IntegratorConfig] = None) -> FlowEnclosure:
    """
    {φ(t', x) : t' ∈ t_iv, x ∈ ξ} の包含

    時刻 t で失敗すれば t' ≥ t でも失敗する（失敗の判定は刻み全体の包含で行う）

    Raises:
        IntegrationFailed: reason は blowup_suspected / substep_budget_exhausted /
            unbounded_interval
    """
    t_iv = Interval.coerce(t_iv)
    t_lo, t_hi = float(t_iv.lo), float(t_iv.hi)
    if not 0 <= t_lo <= t_hi:
        raise ValueError(f"0 ≤ t.lo ≤ t.hi が必要です: [{t_lo}, {t_hi}]")
    cfg = cfg or IntegratorConfig()
    series = lie_series(f, cfg.taylor_order)
    lo, hi = _bounds(xi)
    return _single(endpoint_batch(series, lo, hi, [t_lo], [t_hi], cfg, record_tube=True))


def flow_tube(f: VectorField, xi: IvBox, t_hi: float,
              cfg: Optional[IntegratorConfig] = None) -> FlowEnclosure:
    """φ([0,t_hi], ξ) をチューブ片の和で包む"""
    if t_hi <= 0:
        raise ValueError(f"t_hi は正である必要があります: {t_hi}")
    cfg = cfg or IntegratorConfig()
    series = lie_series(f, cfg.taylor_order)
    lo, hi = _bounds(xi)
    return _single(tube_batch(series, lo, hi, np.array([t_hi]), cfg))
