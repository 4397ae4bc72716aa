#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
区間演算モジュール

外向き丸め付きの区間演算と区間ボックス
- Interval: 下端・上端を numpy 配列で持つ区間（0次元 = 単一区間、1次元 = バッチ）
- IvBox: d 個の Interval の直積
- 各演算の後に np.nextafter で1ulp外側へ押し出す（"nextafter-outward"）
- sin/cos は単調区間分解 + 端点に ±2^-40 のパディング
"""

import math
from decimal import Decimal
from fractions import Fraction
from typing import Iterable, Sequence, Tuple, Union

import numpy as np

from dynamics import MorsescopeError

# レポートに記録する丸め方式
ROUNDING_MODE = "nextafter-outward"

_TRIG_PAD = 2.0 ** -40
_TWO_PI = 2.0 * math.pi

Number = Union[int, float, Fraction, Decimal]


class IntervalError(MorsescopeError):
    """区間演算の基底例外"""


class DivisionByZeroInterval(IntervalError):
    """分母の区間が0を含む"""


class DomainError(IntervalError):
    """定義域外（完全に負の区間の sqrt など）"""


def _down(x):
    return np.nextafter(x, -np.inf)


def _up(x):
    return np.nextafter(x, np.inf)


def _fraction_bounds(value: Fraction) -> Tuple[float, float]:
    """有理数を挟む最小の浮動小数点区間"""
    nearest = float(value)
    exact = Fraction(nearest)
    if exact == value:
        return nearest, nearest
    if exact > value:
        return math.nextafter(nearest, -math.inf), nearest
    return nearest, math.nextafter(nearest, math.inf)


class Interval:
    """
    外向き丸め区間

    lo/hi は常に同じ形の float64 配列。空区間は lo=+inf, hi=-inf で表す。
    値は構築後に変更しない。
    """

    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi=None):
        lo_arr = np.asarray(lo, dtype=np.float64)
        hi_arr = lo_arr if hi is None else np.asarray(hi, dtype=np.float64)
        lo_arr, hi_arr = np.broadcast_arrays(lo_arr, hi_arr)
        if np.isnan(lo_arr).any() or np.isnan(hi_arr).any():
            raise IntervalError("区間の端点に NaN は使えません")
        empty = (lo_arr == np.inf) & (hi_arr == -np.inf)
        if ((lo_arr > hi_arr) & ~empty).any():
            raise IntervalError(f"lo > hi の区間は作れません: [{lo_arr}, {hi_arr}]")
        lo_arr = np.array(lo_arr, dtype=np.float64)
        hi_arr = np.array(hi_arr, dtype=np.float64)
        lo_arr.setflags(write=False)
        hi_arr.setflags(write=False)
        object.__setattr__(self, "lo", lo_arr)
        object.__setattr__(self, "hi", hi_arr)

    def __setattr__(self, name, value):
        raise AttributeError("Interval は不変です")

    # ------------------------------------------------------------------
    # 構築
    # ------------------------------------------------------------------
    @classmethod
    def _raw(cls, lo, hi) -> "Interval":
        """丸め済みの端点から構築（NaN は非有界扱いに置き換える）"""
        lo = np.where(np.isnan(lo), -np.inf, lo)
        hi = np.where(np.isnan(hi), np.inf, hi)
        return cls(lo, hi)

    @classmethod
    def point(cls, x) -> "Interval":
        return cls(x, x)

    @classmethod
    def exact(cls, value: Number) -> "Interval":
        """有理数・10進数リテラルを厳密に包む区間"""
        if isinstance(value, float):
            return cls(value, value)
        if isinstance(value, Decimal):
            value = Fraction(value)
        lo, hi = _fraction_bounds(Fraction(value))
        return cls(lo, hi)

    @classmethod
    def empty(cls, shape=()) -> "Interval":
        return cls(np.full(shape, np.inf), np.full(shape, -np.inf))

    @staticmethod
    def coerce(value) -> "Interval":
        if isinstance(value, Interval):
            return value
        if isinstance(value, (Fraction, Decimal, int)):
            return Interval.exact(value)
        return Interval.point(value)

    @staticmethod
    def where(mask, a: "Interval", b: "Interval") -> "Interval":
        return Interval(np.where(mask, a.lo, b.lo), np.where(mask, a.hi, b.hi))

    # ------------------------------------------------------------------
    # 基本プロパティ
    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.lo.shape

    def __len__(self):
        return len(self.lo)

    def __getitem__(self, idx) -> "Interval":
        return Interval(self.lo[idx], self.hi[idx])

    def is_empty(self):
        return self.lo > self.hi

    def is_unbounded(self):
        return ~self.is_empty() & (np.isinf(self.lo) | np.isinf(self.hi))

    def width(self):
        """上向き丸めした幅 hi - lo"""
        w = _up(self.hi - self.lo)
        return np.where(self.is_empty(), 0.0, w)

    def midpoint(self):
        return self.lo * 0.5 + self.hi * 0.5

    def mag(self):
        """max |x|"""
        return np.maximum(np.abs(self.lo), np.abs(self.hi))

    def contains(self, x):
        x = np.asarray(x, dtype=np.float64)
        return (self.lo <= x) & (x <= self.hi)

    def subset(self, other: "Interval"):
        return self.is_empty() | ((other.lo <= self.lo) & (self.hi <= other.hi))

    def hull(self, other: "Interval") -> "Interval":
        return Interval(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def intersect(self, other: "Interval") -> "Interval":
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        empty = lo > hi
        return Interval(np.where(empty, np.inf, lo), np.where(empty, -np.inf, hi))

    def __eq__(self, other):
        if not isinstance(other, Interval):
            return NotImplemented
        return bool(np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi))

    __hash__ = None

    def __repr__(self):
        if self.lo.ndim == 0:
            return f"Interval([{float(self.lo)!r}, {float(self.hi)!r}])"
        return f"Interval(n={self.lo.size})"

    # ------------------------------------------------------------------
    # 算術
    # ------------------------------------------------------------------
    def __neg__(self) -> "Interval":
        return Interval(-self.hi, -self.lo)

    def __add__(self, other) -> "Interval":
        other = Interval.coerce(other)
        return Interval._raw(_down(self.lo + other.lo), _up(self.hi + other.hi))

    __radd__ = __add__

    def __sub__(self, other) -> "Interval":
        other = Interval.coerce(other)
        return Interval._raw(_down(self.lo - other.hi), _up(self.hi - other.lo))

    def __rsub__(self, other) -> "Interval":
        return Interval.coerce(other) - self

    def __mul__(self, other) -> "Interval":
        other = Interval.coerce(other)
        with np.errstate(invalid="ignore", over="ignore"):
            products = np.stack([
                self.lo * other.lo, self.lo * other.hi,
                self.hi * other.lo, self.hi * other.hi,
            ])
        # 0 * inf は 0
        products = np.where(np.isnan(products), 0.0, products)
        return Interval._raw(_down(products.min(axis=0)), _up(products.max(axis=0)))

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Interval":
        other = Interval.coerce(other)
        if ((other.lo <= 0.0) & (0.0 <= other.hi)).any():
            raise DivisionByZeroInterval("分母の区間が 0 を含んでいます")
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            quotients = np.stack([
                self.lo / other.lo, self.lo / other.hi,
                self.hi / other.lo, self.hi / other.hi,
            ])
        quotients = np.where(np.isnan(quotients), 0.0, quotients)
        return Interval._raw(_down(quotients.min(axis=0)), _up(quotients.max(axis=0)))

    def __rtruediv__(self, other) -> "Interval":
        return Interval.coerce(other) / self

    def __pow__(self, n: int) -> "Interval":
        return self.pow_int(n)

    def pow_int(self, n: int) -> "Interval":
        """非負整数乗"""
        if not isinstance(n, (int, np.integer)) or n < 0:
            raise DomainError(f"指数は非負整数のみ対応しています: {n!r}")
        if n == 0:
            return Interval(np.ones_like(self.lo), np.ones_like(self.hi))
        if n == 1:
            return self
        with np.errstate(invalid="ignore", over="ignore"):
            if n % 2 == 1:
                lo = np.where(self.lo >= 0, _pow_down(self.lo, n), -_pow_up(-self.lo, n))
                hi = np.where(self.hi >= 0, _pow_up(self.hi, n), -_pow_down(-self.hi, n))
            else:
                low_mag = np.where(self.lo > 0, self.lo, np.where(self.hi < 0, -self.hi, 0.0))
                lo = _pow_down(low_mag, n)
                hi = _pow_up(self.mag(), n)
        return Interval._raw(lo, hi)

    def __abs__(self) -> "Interval":
        lo = np.where(self.lo >= 0, self.lo, np.where(self.hi <= 0, -self.hi, 0.0))
        return Interval(lo, self.mag())

    def sqrt(self) -> "Interval":
        if (self.hi < 0).any():
            raise DomainError("完全に負の区間の平方根は定義されません")
        # 0 をまたぐ区間は下端を 0 に切り詰める
        lo = np.maximum(_down(np.sqrt(np.maximum(self.lo, 0.0))), 0.0)
        hi = _up(np.sqrt(self.hi))
        return Interval(lo, hi)

    def sign(self) -> "Interval":
        return Interval(np.sign(self.lo), np.sign(self.hi))

    def sin(self) -> "Interval":
        return _periodic(self, np.sin, peak=0.5 * math.pi, trough=-0.5 * math.pi)

    def cos(self) -> "Interval":
        return _periodic(self, np.cos, peak=0.0, trough=math.pi)


def _pow_down(x, n: int):
    """非負の x に対する x**n の下界"""
    result = np.ones_like(x)
    for _ in range(n):
        result = _down(result * x)
    return np.maximum(result, 0.0)


def _pow_up(x, n: int):
    result = np.ones_like(x)
    for _ in range(n):
        result = _up(result * x)
    return result


def _contains_phase(lo, hi, phase: float):
    """phase + 2kπ が [lo, hi] に入る k が存在するか"""
    k = np.ceil((lo - phase) / _TWO_PI)
    return phase + k * _TWO_PI <= hi


def _periodic(a: Interval, fn, peak: float, trough: float) -> Interval:
    """単調区間分解による sin/cos の包含"""
    finite = np.isfinite(a.lo) & np.isfinite(a.hi)
    lo_in = np.where(finite, a.lo, 0.0)
    hi_in = np.where(finite, a.hi, 0.0)
    v_lo, v_hi = fn(lo_in), fn(hi_in)
    lo = np.minimum(v_lo, v_hi) - _TRIG_PAD
    hi = np.maximum(v_lo, v_hi) + _TRIG_PAD
    wide = ~finite | ((hi_in - lo_in) >= _TWO_PI)
    hi = np.where(wide | _contains_phase(lo_in, hi_in, peak), 1.0, hi)
    lo = np.where(wide | _contains_phase(lo_in, hi_in, trough), -1.0, lo)
    empty = a.is_empty()
    lo = np.where(empty, np.inf, np.clip(lo, -1.0, 1.0))
    hi = np.where(empty, -np.inf, np.clip(hi, -1.0, 1.0))
    return Interval(lo, hi)


def iv_arith(op: str, a: Interval, b: Interval = None) -> Interval:
    """
    演算名で区間演算を呼び出す

    Args:
        op (str): add, sub, mul, div, neg, pow_int, sqrt, sin, cos, abs
        a (Interval): 第1引数
        b (Interval | int | None): 第2引数（pow_int では整数指数）

    Returns:
        Interval: 外向き丸めされた結果
    """
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        return a / b
    if op == "neg":
        return -a
    if op == "pow_int":
        return a.pow_int(int(b))
    if op == "sqrt":
        return a.sqrt()
    if op == "sin":
        return a.sin()
    if op == "cos":
        return a.cos()
    if op == "abs":
        return abs(a)
    raise ValueError(f"未知の区間演算: {op}")


class IvBox:
    """区間ボックス（d 個の Interval の直積）"""

    __slots__ = ("components",)

    def __init__(self, components: Iterable[Interval]):
        comps = tuple(Interval.coerce(c) for c in components)
        if not comps:
            raise IntervalError("IvBox の次元は 1 以上である必要があります")
        object.__setattr__(self, "components", comps)

    def __setattr__(self, name, value):
        raise AttributeError("IvBox は不変です")

    @classmethod
    def from_bounds(cls, lo: Sequence, hi: Sequence) -> "IvBox":
        """各次元の下端・上端（スカラーまたは配列）から構築"""
        return cls(Interval(l, h) for l, h in zip(lo, hi))

    @classmethod
    def point(cls, x: Sequence) -> "IvBox":
        return cls(Interval.point(v) for v in x)

    @property
    def dim(self) -> int:
        return len(self.components)

    @property
    def batch_shape(self):
        return self.components[0].shape

    def __getitem__(self, i: int) -> Interval:
        return self.components[i]

    def __iter__(self):
        return iter(self.components)

    def __len__(self):
        return self.dim

    def take(self, idx) -> "IvBox":
        """バッチ方向の部分集合"""
        return IvBox(c[idx] for c in self.components)

    def lo(self) -> np.ndarray:
        return np.stack([c.lo for c in self.components], axis=-1)

    def hi(self) -> np.ndarray:
        return np.stack([c.hi for c in self.components], axis=-1)

    def hull(self, other: "IvBox") -> "IvBox":
        return IvBox(a.hull(b) for a, b in zip(self, other))

    def intersect(self, other: "IvBox") -> "IvBox":
        return IvBox(a.intersect(b) for a, b in zip(self, other))

    def subset(self, other: "IvBox"):
        return np.logical_and.reduce([a.subset(b) for a, b in zip(self, other)])

    def contains(self, x: Sequence):
        return np.logical_and.reduce([c.contains(v) for c, v in zip(self, x)])

    def width(self) -> np.ndarray:
        return np.stack([c.width() for c in self.components], axis=-1)

    def max_width(self):
        return self.width().max(axis=-1)

    def midpoint(self) -> np.ndarray:
        return np.stack([c.midpoint() for c in self.components], axis=-1)

    def mag(self):
        return np.stack([c.mag() for c in self.components], axis=-1).max(axis=-1)

    def is_empty(self):
        return np.logical_or.reduce([c.is_empty() for c in self.components])

    def is_unbounded(self):
        return np.logical_or.reduce([c.is_unbounded() for c in self.components])

    def __eq__(self, other):
        if not isinstance(other, IvBox):
            return NotImplemented
        return self.components == other.components

    __hash__ = None

    def __repr__(self):
        return f"IvBox({', '.join(repr(c) for c in self.components)})"


def norm2(b: IvBox) -> Interval:
    """ユークリッドノルムの包含"""
    total = b[0].pow_int(2)
    for comp in b.components[1:]:
        total = total + comp.pow_int(2)
    return total.sqrt()
