# -*- coding: utf-8 -*-
"""式の構文解析・微分・評価のテスト"""

import numpy as np
import pytest

from dynamics.interval import IvBox
from dynamics.vfield import (
    ExprSyntaxError,
    UnknownIdentifier,
    UnknownSystem,
    VectorField,
    builtin,
    diff,
    eval_interval,
    eval_real,
    lie_series,
    parse_expr,
    pretty,
)


@pytest.mark.parametrize("source,expected", [
    ("x1 + x2 + x3", "x1 + x2 + x3"),
    ("(x1 + x2) * x3", "(x1 + x2) * x3"),
    ("x1 - (x2 - x3)", "x1 - (x2 - x3)"),
    ("-x1^2", "-x1^2"),
    ("(-x1)^2", "(-x1)^2"),
    ("sin(x1*x2)", "sin(x1 * x2)"),
    ("0.25*x1", "0.25 * x1"),
])
def test_pretty_uses_minimal_parentheses(source, expected):
    assert pretty(parse_expr(source)) == expected


def test_power_is_right_associative():
    assert parse_expr("x1^2^3").exponent == 8


@pytest.mark.parametrize("source,position", [
    ("x1 + * x2", 5),
    ("x1 $ 2", 3),
    ("(x1 + x2", 8),
])
def test_syntax_error_reports_position(source, position):
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr(source)
    assert info.value.position == position


@pytest.mark.parametrize("source", ["", "x1^-1", "x1^0.5", "sin x1"])
def test_rejects_malformed_expressions(source):
    with pytest.raises(ExprSyntaxError):
        parse_expr(source)


def test_derivatives():
    assert pretty(diff(parse_expr("x1^3"), 1)) == "3 * x1^2"
    assert pretty(diff(parse_expr("x1^3"), 2)) == "0"
    assert pretty(diff(parse_expr("sin(x1*x2)"), 2)) == "cos(x1 * x2) * x1"
    assert pretty(diff(parse_expr("abs(x1)"), 1)) == "sign(x1)"


def test_unbound_identifiers_are_rejected():
    with pytest.raises(UnknownIdentifier):
        VectorField.from_sources(["x3"])
    with pytest.raises(UnknownIdentifier):
        VectorField.from_sources(["k*x1"])
    field = VectorField.from_sources(["k*x1"], {"k": 2})
    assert eval_real(field, [1.5]).tolist() == [3.0]


def test_builtin_systems():
    f = builtin("two_cycles")
    assert f.dim == 2
    assert f.describe()["params"] == {"mu": "2"}
    np.testing.assert_allclose(eval_real(f, [1.0, 0.0]), [0.0, 1.0])
    with pytest.raises(UnknownSystem):
        builtin("lorenz")
    with pytest.raises(UnknownIdentifier):
        builtin("two_cycles", {"nu": 1})
    with pytest.raises(UnknownIdentifier):
        builtin("linear", {})
    assert builtin("linear", {"lambdas": [-1, 2, 3]}).dim == 3


def test_interval_evaluation_contains_point_values(two_cycles):
    rng = np.random.default_rng(5)
    lo = rng.uniform(-2, 2, (200, 2))
    hi = lo + rng.uniform(0, 0.3, (200, 2))
    box = IvBox.from_bounds(lo.T, hi.T)
    values = eval_interval(two_cycles, box)
    points = lo + rng.random((200, 2)) * (hi - lo)
    real = eval_real(two_cycles, points)
    for i in range(2):
        assert values[i].contains(real[:, i]).all()


def test_lie_series_of_linear_field():
    f = builtin("linear", {"lambdas": [-2, 3]})
    series = lie_series(f, 3)
    coeffs = series.coefficients(IvBox.point([1.0, 1.0]))
    assert len(coeffs) == 3
    for k, box in enumerate(coeffs, 1):
        assert box[0].contains((-2.0) ** k)
        assert box[1].contains(3.0 ** k)
    remainder = series.remainder(IvBox.point([1.0, 1.0]))
    assert remainder[0].contains(16.0)
