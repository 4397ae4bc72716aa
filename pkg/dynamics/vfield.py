#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
ベクトル場モジュール

ODE の右辺 v(x) を式として扱う
- 式文法の字句解析・再帰下降構文解析（parse_expr）
- 記号微分（diff）と Lie 微分列（lie_series）
- 共通部分式を1度だけ評価する命令列（Tape）による実数・区間評価
- 組み込み系（two_cycles / circle_demo / linear）
"""

import functools
import logging
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from dynamics import MorsescopeError
from dynamics.interval import Interval, IvBox

logger = logging.getLogger(__name__)

FUNCTIONS = ("sin", "cos", "sqrt", "abs", "sign")
_VAR_PATTERN = re.compile(r"x([1-9][0-9]*)$")


class ExpressionError(MorsescopeError):
    """式の基底例外"""


class ExprSyntaxError(ExpressionError, SyntaxError):
    """構文エラー（position は 0 始まりの文字位置）"""

    def __init__(self, message: str, position: int, source: str = ""):
        super().__init__(f"{message}（位置 {position}）")
        self.position = position
        self.source = source


class UnknownIdentifier(ExpressionError):
    """束縛されていない変数・パラメータ"""


class UnknownSystem(ExpressionError):
    """未知の組み込み系"""


# ----------------------------------------------------------------------
# AST
# ----------------------------------------------------------------------
# 表示用の優先順位
_PREC_ADD = 1
_PREC_MUL = 2
_PREC_NEG = 3
_PREC_POW = 4
_PREC_ATOM = 5


class Expr:
    """式ノードの基底"""

    precedence = _PREC_ATOM

    def __str__(self):
        return pretty(self)


@dataclass(frozen=True)
class Const(Expr):
    value: Fraction

    @property
    def precedence(self):
        return _PREC_NEG if self.value < 0 else _PREC_ATOM


@dataclass(frozen=True)
class Param(Expr):
    name: str


@dataclass(frozen=True)
class Var(Expr):
    index: int  # 1 始まり


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr
    precedence = _PREC_NEG


@dataclass(frozen=True)
class BinOp(Expr):
    op: str  # + - * /
    left: Expr
    right: Expr

    @property
    def precedence(self):
        return _PREC_ADD if self.op in "+-" else _PREC_MUL


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int
    precedence = _PREC_POW


@dataclass(frozen=True)
class Call(Expr):
    fn: str
    arg: Expr


ZERO = Const(Fraction(0))
ONE = Const(Fraction(1))


# ----------------------------------------------------------------------
# 構文解析
# ----------------------------------------------------------------------
_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


def _tokenize(src: str) -> List[Tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        match = _TOKEN.match(src, pos)
        if match is None:
            start = pos + len(src[pos:]) - len(src[pos:].lstrip())
            raise ExprSyntaxError(f"不正な文字 {src[start]!r}", start, src)
        kind = match.lastgroup
        text = match.group(kind)
        tokens.append((kind, text, match.start(kind)))
        pos = match.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    """
    再帰下降パーサ

    expr   := term (('+'|'-') term)*
    term   := unary (('*'|'/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' exponent)?
    exponent := INT ('^' exponent)?
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'
    """

    def __init__(self, src: str):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message: str, tok=None):
        tok = tok or self.peek()
        raise ExprSyntaxError(message, tok[2], self.src)

    def parse(self) -> Expr:
        if self.peek()[0] == "end":
            self.error("空の式です")
        node = self.expr()
        if self.peek()[0] != "end":
            self.error(f"余分なトークン {self.peek()[1]!r}")
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        node = self.atom()
        if self.peek()[1] == "^":
            self.take()
            node = Pow(node, self.exponent())
        return node

    def exponent(self) -> int:
        tok = self.take()
        if tok[0] != "num" or not tok[1].isdigit():
            self.error("指数は非負の整数リテラルである必要があります", tok)
        value = int(tok[1])
        if self.peek()[1] == "^":
            self.take()
            value = value ** self.exponent()
        return value

    def atom(self) -> Expr:
        tok = self.take()
        kind, text, _ = tok
        if kind == "num":
            return Const(Fraction(text))
        if kind == "name":
            if text in FUNCTIONS:
                if self.peek()[1] != "(":
                    self.error(f"関数 {text} の後に '(' が必要です")
                self.take()
                arg = self.expr()
                if self.take()[1] != ")":
                    self.error("')' が必要です", self.tokens[self.i - 1])
                return Call(text, arg)
            var = _VAR_PATTERN.match(text)
            if var:
                return Var(int(var.group(1)))
            return Param(text)
        if text == "(":
            node = self.expr()
            if self.take()[1] != ")":
                self.error("')' が必要です", self.tokens[self.i - 1])
            return node
        if kind == "end":
            self.error("式が途中で終わっています", tok)
        self.error(f"予期しないトークン {text!r}", tok)


def parse_expr(src: str) -> Expr:
    """
    式文字列を AST に変換する

    Args:
        src (str): 例 "x1^2 + x2^2 - mu"

    Returns:
        Expr: 構文木（簡約はしない）
    """
    return _Parser(src).parse()


# ----------------------------------------------------------------------
# 表示
# ----------------------------------------------------------------------
def _format_const(value: Fraction) -> str:
    if value.denominator == 1:
        return str(value.numerator)
    den = value.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        # 有限小数にならない定数は除算として表示
        return f"({value.numerator} / {value.denominator})"
    digits = max(twos, fives)
    scaled = abs(value) * 10 ** digits
    text = str(scaled.numerator).rjust(digits + 1, "0")
    sign = "-" if value < 0 else ""
    return f"{sign}{text[:-digits]}.{text[-digits:]}"


def pretty(e: Expr) -> str:
    """最小限の括弧で式を文字列化する"""
    if isinstance(e, Const):
        return _format_const(e.value)
    if isinstance(e, Param):
        return e.name
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Call):
        return f"{e.fn}({pretty(e.arg)})"
    if isinstance(e, Neg):
        inner = pretty(e.arg)
        if e.arg.precedence < _PREC_NEG or isinstance(e.arg, Neg) or (
                isinstance(e.arg, Const) and e.arg.value < 0):
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, Pow):
        base = pretty(e.base)
        if e.base.precedence <= _PREC_POW:
            base = f"({base})"
        return f"{base}^{e.exponent}"
    if isinstance(e, BinOp):
        left = pretty(e.left)
        if e.left.precedence < e.precedence:
            left = f"({left})"
        right = pretty(e.right)
        same_assoc = e.op in "+*" and isinstance(e.right, BinOp) and e.right.op == e.op
        if e.right.precedence < e.precedence or (
                e.right.precedence == e.precedence and not same_assoc):
            right = f"({right})"
        return f"{left} {e.op} {right}"
    raise TypeError(f"未知のノード: {e!r}")


# ----------------------------------------------------------------------
# 簡約付きコンストラクタ（定数畳み込みと 0/1 恒等式のみ）
# ----------------------------------------------------------------------
def _is(e: Expr, value) -> bool:
    return isinstance(e, Const) and e.value == value


def add(a: Expr, b: Expr) -> Expr:
    if _is(a, 0):
        return b
    if _is(b, 0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is(b, 0):
        return a
    if _is(a, 0):
        return neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is(a, 0) or _is(b, 0):
        return ZERO
    if _is(a, 1):
        return b
    if _is(b, 1):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _is(a, -1):
        return neg(b)
    if _is(b, -1):
        return neg(a)
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is(a, 0):
        return ZERO
    if _is(b, 1):
        return a
    return BinOp("/", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a: Expr, n: int) -> Expr:
    if n == 0:
        return ONE
    if n == 1:
        return a
    if isinstance(a, Const):
        return Const(a.value ** n)
    return Pow(a, n)


def call(fn: str, a: Expr) -> Expr:
    return Call(fn, a)


# ----------------------------------------------------------------------
# 記号微分
# ----------------------------------------------------------------------
def diff(e: Expr, i: int) -> Expr:
    """
    x_i による偏微分

    共有部分木は1度だけ微分する（DAG の共有を保つ）
    abs の微分は sign(x)（sign(0)=0）
    """
    memo: Dict[int, Expr] = {}

    def d(node: Expr) -> Expr:
        key = id(node)
        if key in memo:
            return memo[key]
        if isinstance(node, (Const, Param)):
            out = ZERO
        elif isinstance(node, Var):
            out = ONE if node.index == i else ZERO
        elif isinstance(node, Neg):
            out = neg(d(node.arg))
        elif isinstance(node, BinOp):
            da, db = d(node.left), d(node.right)
            if node.op == "+":
                out = add(da, db)
            elif node.op == "-":
                out = sub(da, db)
            elif node.op == "*":
                out = add(mul(da, node.right), mul(node.left, db))
            else:
                out = div(sub(mul(da, node.right), mul(node.left, db)), power(node.right, 2))
        elif isinstance(node, Pow):
            out = mul(mul(Const(Fraction(node.exponent)), power(node.base, node.exponent - 1)),
                      d(node.base))
        elif isinstance(node, Call):
            da = d(node.arg)
            if _is(da, 0):
                out = ZERO
            elif node.fn == "sin":
                out = mul(call("cos", node.arg), da)
            elif node.fn == "cos":
                out = neg(mul(call("sin", node.arg), da))
            elif node.fn == "sqrt":
                out = div(da, mul(Const(Fraction(2)), node))
            elif node.fn == "abs":
                out = mul(call("sign", node.arg), da)
            else:
                # sign は区分的に定数
                out = ZERO
        else:
            raise TypeError(f"未知のノード: {node!r}")
        memo[key] = out
        return out

    return d(e)


def identifiers(e: Expr) -> Tuple[set, set]:
    """式中の変数番号とパラメータ名"""
    variables, params = set(), set()
    stack, seen = [e], set()
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if isinstance(node, Var):
            variables.add(node.index)
        elif isinstance(node, Param):
            params.add(node.name)
        elif isinstance(node, (Neg, Call)):
            stack.append(node.arg)
        elif isinstance(node, Pow):
            stack.append(node.base)
        elif isinstance(node, BinOp):
            stack.extend((node.left, node.right))
    return variables, params


# ----------------------------------------------------------------------
# 評価用の命令列
# ----------------------------------------------------------------------
class Tape:
    """
    式 DAG を共通部分式除去した命令列

    各命令は (op, a, b, payload)。a/b はスロット番号。
    同じ (op, 子スロット, payload) は1スロットにまとめる。
    """

    def __init__(self, exprs: Sequence[Expr], dim: int, params: Mapping[str, Fraction]):
        self.dim = dim
        self.instructions: List[Tuple[str, int, int, object]] = []
        self._keys: Dict[tuple, int] = {}
        self._ids: Dict[int, int] = {}
        self._params = dict(params)
        self.outputs = [self._compile(e) for e in exprs]
        self._ids.clear()

    def __len__(self):
        return len(self.instructions)

    def _emit(self, op: str, a: int = -1, b: int = -1, payload=None) -> int:
        key = (op, a, b, payload)
        slot = self._keys.get(key)
        if slot is None:
            slot = len(self.instructions)
            self.instructions.append(key)
            self._keys[key] = slot
        return slot

    def _compile(self, node: Expr) -> int:
        slot = self._ids.get(id(node))
        if slot is not None:
            return slot
        if isinstance(node, Const):
            slot = self._emit("const", payload=node.value)
        elif isinstance(node, Param):
            if node.name not in self._params:
                raise UnknownIdentifier(f"未定義のパラメータ: {node.name}")
            slot = self._emit("const", payload=self._params[node.name])
        elif isinstance(node, Var):
            if not 1 <= node.index <= self.dim:
                raise UnknownIdentifier(f"変数 x{node.index} は次元 {self.dim} の範囲外です")
            slot = self._emit("var", payload=node.index - 1)
        elif isinstance(node, Neg):
            slot = self._emit("neg", self._compile(node.arg))
        elif isinstance(node, BinOp):
            slot = self._emit(node.op, self._compile(node.left), self._compile(node.right))
        elif isinstance(node, Pow):
            slot = self._emit("pow", self._compile(node.base), payload=node.exponent)
        elif isinstance(node, Call):
            slot = self._emit(node.fn, self._compile(node.arg))
        else:
            raise TypeError(f"未知のノード: {node!r}")
        self._ids[id(node)] = slot
        return slot

    def run_interval(self, box: IvBox) -> List[Interval]:
        """区間評価（box はバッチでもよい）"""
        shape = box.batch_shape
        values: List[Interval] = []
        for op, a, b, payload in self.instructions:
            if op == "const":
                c = Interval.exact(payload)
                out = Interval(np.broadcast_to(c.lo, shape), np.broadcast_to(c.hi, shape))
            elif op == "var":
                out = box[payload]
            elif op == "+":
                out = values[a] + values[b]
            elif op == "-":
                out = values[a] - values[b]
            elif op == "*":
                out = values[a] * values[b]
            elif op == "/":
                out = values[a] / values[b]
            elif op == "neg":
                out = -values[a]
            elif op == "pow":
                out = values[a].pow_int(payload)
            elif op == "abs":
                out = abs(values[a])
            else:
                out = getattr(values[a], op)()
            values.append(out)
        return [values[s] for s in self.outputs]

    def run_real(self, x: np.ndarray) -> List[np.ndarray]:
        """浮動小数点評価（x の最終軸が次元）"""
        x = np.asarray(x, dtype=np.float64)
        shape = x.shape[:-1]
        values: List[np.ndarray] = []
        with np.errstate(all="ignore"):
            for op, a, b, payload in self.instructions:
                if op == "const":
                    out = np.full(shape, float(payload))
                elif op == "var":
                    out = x[..., payload]
                elif op == "+":
                    out = values[a] + values[b]
                elif op == "-":
                    out = values[a] - values[b]
                elif op == "*":
                    out = values[a] * values[b]
                elif op == "/":
                    out = values[a] / values[b]
                elif op == "neg":
                    out = -values[a]
                elif op == "pow":
                    out = values[a] ** payload
                else:
                    out = getattr(np, op)(values[a])
                values.append(out)
        return [values[s] for s in self.outputs]


# ----------------------------------------------------------------------
# ベクトル場
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class VectorField:
    """
    ベクトル場 v: R^d -> R^d

    パラメータは構築時に固定（スイープでは新しい場を作る）
    """

    components: Tuple[Expr, ...]
    params: Tuple[Tuple[str, Fraction], ...] = ()
    name: str = "custom"

    def __post_init__(self):
        bound = dict(self.params)
        for k, comp in enumerate(self.components, 1):
            variables, names = identifiers(comp)
            for idx in sorted(variables):
                if not 1 <= idx <= self.dim:
                    raise UnknownIdentifier(f"成分 {k}: 変数 x{idx} は次元 {self.dim} の範囲外です")
            missing = sorted(names - set(bound))
            if missing:
                raise UnknownIdentifier(f"成分 {k}: 未定義のパラメータ {', '.join(missing)}")

    @classmethod
    def from_sources(cls, sources: Sequence[str], params: Optional[Mapping[str, object]] = None,
                     name: str = "custom") -> "VectorField":
        """式文字列のリストから構築"""
        comps = tuple(parse_expr(s) for s in sources)
        bound = tuple(sorted((k, Fraction(str(v))) for k, v in (params or {}).items()))
        return cls(comps, bound, name)

    @property
    def dim(self) -> int:
        return len(self.components)

    @property
    def param_values(self) -> Dict[str, Fraction]:
        return dict(self.params)

    def sources(self) -> List[str]:
        return [pretty(c) for c in self.components]

    @functools.cached_property
    def tape(self) -> Tape:
        return Tape(self.components, self.dim, self.param_values)

    def compile(self, exprs: Sequence[Expr]) -> Tape:
        return Tape(exprs, self.dim, self.param_values)

    def describe(self) -> Dict[str, object]:
        return {
            "name": self.name,
            "dimension": self.dim,
            "components": self.sources(),
            "params": {k: str(v) for k, v in self.params},
        }


def eval_real(f: VectorField, x) -> np.ndarray:
    """点（または点の配列）での非検証評価"""
    x = np.asarray(x, dtype=np.float64)
    return np.stack(f.tape.run_real(x), axis=-1)


def eval_interval(f: VectorField, b: IvBox) -> IvBox:
    """区間ボックス上での包含評価"""
    return IvBox(f.tape.run_interval(b))


@dataclass(frozen=True)
class LieSeries:
    """Taylor 係数用の Lie 微分列 L^1..L^p と剰余項 L^{p+1} の命令列"""

    order: int
    field_tape: Tape
    coefficient_tape: Tape  # L^1..L^p を次数順に d 成分ずつ
    remainder_tape: Tape
    jacobian_tape: Tape  # ∂_j L^k_i を (k, i, j) 順に
    dim: int

    def coefficients(self, box: IvBox) -> List[IvBox]:
        flat = self.coefficient_tape.run_interval(box)
        return [IvBox(flat[k * self.dim:(k + 1) * self.dim]) for k in range(self.order)]

    def jacobians(self, box: IvBox) -> List[List[List[Interval]]]:
        """係数のヤコビ行列 [k][i][j]"""
        flat = self.jacobian_tape.run_interval(box)
        d = self.dim
        return [[flat[(k * d + i) * d:(k * d + i + 1) * d] for i in range(d)] for k in range(self.order)]

    def remainder(self, box: IvBox) -> IvBox:
        return IvBox(self.remainder_tape.run_interval(box))

    def field(self, box: IvBox) -> IvBox:
        return IvBox(self.field_tape.run_interval(box))


def lie_derivatives(f: VectorField, order: int) -> List[Tuple[Expr, ...]]:
    """L^0..L^order（L^0 = 恒等写像、L^{k+1}_i = Σ_j ∂_j L^k_i · f_j）"""
    levels = [tuple(Var(i) for i in range(1, f.dim + 1))]
    for _ in range(order):
        prev = levels[-1]
        nxt = []
        for comp in prev:
            total: Expr = ZERO
            for j in range(1, f.dim + 1):
                total = add(total, mul(diff(comp, j), f.components[j - 1]))
            nxt.append(total)
        levels.append(tuple(nxt))
    return levels


@functools.lru_cache(maxsize=32)
def lie_series(f: VectorField, order: int) -> LieSeries:
    """Lie 微分列を構築してキャッシュする（同じ場・次数では再利用）"""
    levels = lie_derivatives(f, order + 1)
    coeff_exprs = [e for level in levels[1:order + 1] for e in level]
    series = LieSeries(
        order=order,
        field_tape=f.tape,
        coefficient_tape=f.compile(coeff_exprs),
        remainder_tape=f.compile(levels[order + 1]),
        jacobian_tape=f.compile([diff(e, j) for e in coeff_exprs for j in range(1, f.dim + 1)]),
        dim=f.dim,
    )
    logger.info(f"Lie 微分列を構築: {f.name} 次数{order} "
                f"(係数命令 {len(series.coefficient_tape)}, 剰余命令 {len(series.remainder_tape)})")
    return series


# ----------------------------------------------------------------------
# 組み込み系
# ----------------------------------------------------------------------
_TWO_CYCLES = (
    "-x2 + x1*(x1^2+x2^2-mu)*(x1^2+x2^2-1)",
    "x1 + x2*(x1^2+x2^2-mu)*(x1^2+x2^2-1)",
)
_CIRCLE_DEMO = (
    "-x2 + x1*(1-x1^2-x2^2)",
    "x1 + x2*(1-x1^2-x2^2)",
)

BUILTIN_SYSTEMS = ("two_cycles", "circle_demo", "linear")


def builtin(name: str, params: Optional[Mapping[str, object]] = None) -> VectorField:
    """
    組み込み系を返す

    Args:
        name (str): two_cycles / circle_demo / linear
        params (dict): two_cycles は mu（既定 2）、linear は lambda1..lambdad
            または lambdas（数列）

    Returns:
        VectorField: パラメータ束縛済みのベクトル場
    """
    params = dict(params or {})
    if name == "two_cycles":
        unknown = set(params) - {"mu"}
        if unknown:
            raise UnknownIdentifier(f"two_cycles のパラメータは mu のみです: {sorted(unknown)}")
        params.setdefault("mu", 2)
        return VectorField.from_sources(_TWO_CYCLES, params, name="two_cycles")
    if name == "circle_demo":
        if params:
            raise UnknownIdentifier(f"circle_demo はパラメータを取りません: {sorted(params)}")
        return VectorField.from_sources(_CIRCLE_DEMO, {}, name="circle_demo")
    if name == "linear":
        if "lambdas" in params:
            values = params.pop("lambdas")
            if isinstance(values, (int, float, str)):
                values = [values]
            params.update({f"lambda{i}": v for i, v in enumerate(values, 1)})
        dim = len(params)
        expected = {f"lambda{i}" for i in range(1, dim + 1)}
        if dim == 0 or set(params) != expected:
            raise UnknownIdentifier(f"linear には lambda1..lambdad が必要です: {sorted(params)}")
        sources = [f"lambda{i}*x{i}" for i in range(1, dim + 1)]
        return VectorField.from_sources(sources, params, name="linear")
    raise UnknownSystem(f"未知の組み込み系: {name}（{', '.join(BUILTIN_SYSTEMS)} から選択）")
