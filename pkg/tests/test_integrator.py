# -*- coding: utf-8 -*-
"""検証付き積分のテスト（厳密解・参照軌道との比較）"""

import itertools

import numpy as np
import pytest

from dynamics.integrator import (
    FlowStatus,
    IntegrationFailed,
    IntegratorConfig,
    ValidationFailed,
    endpoint_batch,
    flow_endpoint,
    flow_tube,
    rough_enclosure,
)
from dynamics.interval import Interval, IvBox
from dynamics.vfield import VectorField, builtin, lie_series
from analysis.oracles import closed_form_circle, closed_form_linear, reference_flow


def corners(lo, hi):
    return [np.array(c) for c in itertools.product(*zip(lo, hi))]


def test_linear_sink_endpoint_contains_exact_solution(sink):
    lo, hi = [0.5, -0.6], [0.6, -0.5]
    result = flow_endpoint(sink, IvBox.from_bounds(lo, hi), Interval(1.0))
    assert result.ok
    for x0 in corners(lo, hi) + [np.array([0.55, -0.55])]:
        assert bool(result.endpoint.contains(closed_form_linear([-1, -1], x0, 1.0)))
    assert result.endpoint.max_width() < 0.5


def test_saddle_time_interval(saddle):
    lo, hi = [0.2, 0.2], [0.25, 0.25]
    result = flow_endpoint(saddle, IvBox.from_bounds(lo, hi), Interval(0.9, 1.1))
    for t in (0.9, 0.95, 1.0, 1.1):
        for x0 in corners(lo, hi):
            assert bool(result.endpoint.contains(closed_form_linear([-1, 1], x0, t)))


def test_zero_time_returns_initial_box(two_cycles):
    box = IvBox.from_bounds([0.1, 0.2], [0.3, 0.4])
    result = flow_endpoint(two_cycles, box, Interval(0.0))
    assert bool(result.endpoint.contains([0.1, 0.2]))
    assert bool(result.endpoint.contains([0.3, 0.4]))


def test_circle_demo_against_closed_form():
    f = builtin("circle_demo")
    lo, hi = [0.79, -0.01], [0.81, 0.01]
    result = flow_endpoint(f, IvBox.from_bounds(lo, hi), Interval(0.5))
    for x0 in corners(lo, hi):
        assert bool(result.endpoint.contains(closed_form_circle(x0, 0.5)))


def test_two_cycles_against_reference_trajectory(two_cycles):
    lo, hi = [0.5, 0.5], [0.52, 0.52]
    result = flow_endpoint(two_cycles, IvBox.from_bounds(lo, hi), Interval(0.3))
    points = np.array(corners(lo, hi))
    reference = reference_flow(two_cycles, points, 0.3, steps=600)
    for y in reference:
        assert bool(result.endpoint.contains(y))


def test_tube_contains_intermediate_points(saddle):
    lo, hi = [0.4, 0.1], [0.45, 0.15]
    result = flow_tube(saddle, IvBox.from_bounds(lo, hi), 0.5, IntegratorConfig(tube_segments=4))
    assert len(result.tube) >= 4
    hull = result.tube_hull()
    for t in np.linspace(0.0, 0.5, 11):
        for x0 in corners(lo, hi):
            assert bool(hull.contains(closed_form_linear([-1, 1], x0, t)))


def test_rough_enclosure_contains_initial_box(sink):
    box = IvBox.from_bounds([0.0, 0.0], [0.1, 0.1])
    enclosure = rough_enclosure(sink, box, 0.05)
    assert bool(box.subset(enclosure))
    with pytest.raises(ValueError):
        rough_enclosure(sink, box, 0.0)


def test_rough_enclosure_fails_for_fast_blowup():
    f = VectorField.from_sources(["x1^2"])
    with pytest.raises(ValidationFailed):
        rough_enclosure(f, IvBox.from_bounds([10.0], [10.01]), 10.0)


def test_blowup_is_reported():
    f = VectorField.from_sources(["x1^2"])
    with pytest.raises(IntegrationFailed) as info:
        flow_endpoint(f, IvBox.from_bounds([1.0], [1.01]), Interval(2.0), IntegratorConfig(max_substeps=500))
    assert info.value.reason in ("blowup_suspected", "substep_budget_exhausted", "unbounded_interval")


def test_invalid_time_interval(sink):
    with pytest.raises(ValueError):
        flow_endpoint(sink, IvBox.point([0.0, 0.0]), Interval(-1.0, 1.0))


@pytest.mark.parametrize("kwargs", [
    {"taylor_order": 0},
    {"taylor_order": 6},
    {"inflation": 1.0},
    {"min_step": 0.0},
])
def test_integrator_config_validation(kwargs):
    with pytest.raises(ValueError):
        IntegratorConfig(**kwargs)


def test_two_cycles_blowup_from_far_box(two_cycles):
    # r' ≈ r^5 なので (3,3) からは t ≈ 1/1296 で爆発する
    box = IvBox.from_bounds([2.99, 2.99], [3.01, 3.01])
    with pytest.raises(IntegrationFailed) as info:
        flow_endpoint(two_cycles, box, Interval(0.002))
    assert info.value.reason == "blowup_suspected"


def failure_sweep(f, box, times, cfg=None):
    failed = []
    for t in times:
        try:
            flow_endpoint(f, box, Interval(float(t)), cfg)
            failed.append(False)
        except IntegrationFailed:
            failed.append(True)
    return failed


def test_failure_is_monotone_in_time_near_blowup(two_cycles):
    box = IvBox.from_bounds([2.99, 2.99], [3.01, 3.01])
    failed = failure_sweep(two_cycles, box, np.linspace(5e-5, 0.002, 40))
    assert failed == sorted(failed)
    assert not failed[0] and failed[-1]


def test_failure_is_monotone_in_time_under_substep_budget(sink):
    box = IvBox.from_bounds([0.5, -0.6], [0.6, -0.5])
    failed = failure_sweep(sink, box, np.linspace(0.05, 2.0, 40), IntegratorConfig(max_substeps=3))
    assert failed == sorted(failed)
    assert not failed[0] and failed[-1]


@pytest.mark.parametrize("t", [0.1, 0.25, 0.5])
def test_linear_endpoint_width_follows_flow_rate(t):
    lambdas = np.array([-1.0, 0.5])
    f = builtin("linear", {"lambdas": lambdas.tolist()})
    box = IvBox.from_bounds([0.4, -0.3], [0.5, -0.2])
    result = flow_endpoint(f, box, Interval(t))
    bound = box.width() * np.exp(lambdas * t) * 1.01 + 1e-6
    assert np.all(result.endpoint.width() <= bound)


@pytest.mark.slow
def test_random_boxes_contain_reference_trajectories(two_cycles):
    rng = np.random.default_rng(11)
    systems = [two_cycles, builtin("circle_demo"), builtin("linear", {"lambdas": [-1, 1]})]
    cfg = IntegratorConfig()
    fractions = np.linspace(0.0, 1.0, 6)
    n, samples, slack = 334, 10, 1e-9
    checked = 0
    for f in systems:
        lo = rng.uniform(-0.9, 0.85, size=(n, 2))
        hi = lo + rng.uniform(0.0, 0.05, size=(n, 2))
        t = rng.uniform(0.01, 0.3, size=n)
        result = endpoint_batch(lie_series(f, cfg.taylor_order), lo, hi, t, t, cfg, record_tube=True)

        x0 = lo[:, None, :] + rng.random((n, samples, 2)) * (hi - lo)[:, None, :]
        starts = np.repeat(x0[:, :, None, :], fractions.size, axis=2).reshape(-1, 2)
        times = np.broadcast_to(t[:, None, None] * fractions, (n, samples, fractions.size)).reshape(-1)
        states = reference_flow(f, starts, times, steps=400).reshape(n, samples, fractions.size, 2)

        for i in np.flatnonzero(result.status == FlowStatus.OK):
            checked += 1
            ends = states[i, :, -1]
            assert np.all(ends >= result.endpoint_lo[i] - slack)
            assert np.all(ends <= result.endpoint_hi[i] + slack)

            rows = np.flatnonzero(result.seg_owner == i)
            s_lo, s_hi = result.seg_lo[rows], result.seg_hi[rows]
            pts = states[i].reshape(-1, 2)
            inside = ((pts[:, None, :] >= s_lo[None] - slack)
                      & (pts[:, None, :] <= s_hi[None] + slack)).all(axis=2).any(axis=1)
            assert inside.all()
    assert checked > 950
