# -*- coding: utf-8 -*-
"""包含写像・チューブ写像のテスト"""

import joblib
import numpy as np
import pytest

from dynamics.enclosure import (
    Adaptive,
    CombinatorialMap,
    Expression,
    Fixed,
    build_map,
    build_tube_map,
    strategy_from_dict,
    tau_interval,
)
from dynamics.grid import Grid
from dynamics.integrator import FlowStatus
from dynamics.interval import IvBox
from dynamics.vfield import VectorField, eval_real
from analysis.oracles import closed_form_linear, enclosure_violations


@pytest.fixture
def saddle_map(saddle, small_grid):
    return build_map(saddle, small_grid, Fixed(0.1))


def test_strategies_validate():
    with pytest.raises(ValueError):
        Fixed(0.0)
    with pytest.raises(ValueError):
        Adaptive(D=1.0)
    with pytest.raises(ValueError):
        Adaptive(delta=0.0)
    assert strategy_from_dict({"kind": "adaptive"}) == Adaptive()
    assert strategy_from_dict({"kind": "fixed", "h": "0.5"}) == Fixed(0.5)
    with pytest.raises(ValueError):
        strategy_from_dict({"kind": "random"})


def test_adaptive_tau_contains_point_value(two_cycles, small_grid):
    st = Adaptive(D=4.0, delta=0.1)
    cell = small_grid.linear_index((5, 2))
    tau = tau_interval(two_cycles, small_grid, cell, st)
    lo, hi = small_grid.cell_bounds(np.array([cell]))
    center = 0.5 * (lo[0] + hi[0])
    diag = float(np.hypot(0.25, 0.25))
    expected = 4.0 * diag / (np.linalg.norm(eval_real(two_cycles, center)) + 0.1)
    assert tau.contains(expected)


def test_saddle_map_contains_exact_images(saddle_map, small_grid):
    assert saddle_map.n_failed == 0
    rng = np.random.default_rng(1)
    for cell in rng.choice(small_grid.n_cells, 20, replace=False).tolist():
        lo, hi = small_grid.cell_bounds(np.array([cell]))
        x0 = lo[0] + rng.random(2) * (hi[0] - lo[0])
        y = closed_form_linear([-1, 1], x0, 0.1)
        if np.all(np.abs(y) < 1.0):
            covering, _ = small_grid.cover(IvBox.point(y))
            assert covering.issubset(saddle_map.images(cell))


def test_origin_cell_maps_to_itself(saddle_map, small_grid):
    cell = small_grid.linear_index((4, 4))
    assert cell in saddle_map.images(cell)
    assert saddle_map.flag(cell) == "ok"


def test_corner_cells_exit_domain(saddle_map, small_grid):
    corner = small_grid.linear_index((7, 7))
    assert saddle_map.flag(corner) == "exits_domain"
    assert saddle_map.tau(corner).contains(0.1)


def test_sampled_enclosure_has_no_violations(two_cycles):
    g = Grid([(-3, 3), (-3, 3)], [16, 16])
    fmap = build_map(two_cycles, g, Adaptive(D=4.0, delta=0.1))
    result = enclosure_violations(two_cycles, fmap, samples=300, seed=2)
    assert result["checked"] > 0
    assert result["violations"] == 0


def test_nonpositive_step_cells_fail_to_all_cells(saddle, small_grid):
    fmap = build_map(saddle, small_grid, Expression("x1"))
    assert fmap.n_failed == 40
    assert fmap.failure_reasons() == {"nonpositive_step": 40}
    failed_cell = small_grid.linear_index((0, 0))
    assert fmap.status[failed_cell] == FlowStatus.NONPOSITIVE_STEP
    assert fmap.images(failed_cell) == small_grid.all_cells()
    assert fmap.flag(failed_cell) == "failed"


def test_digest_is_independent_of_chunking_and_workers(saddle, small_grid):
    serial = build_map(saddle, small_grid, Fixed(0.1), workers=1, chunk_size=4096)
    parallel = build_map(saddle, small_grid, Fixed(0.1), workers=2, chunk_size=16)
    assert serial.digest() == parallel.digest()
    np.testing.assert_array_equal(serial.targets, parallel.targets)


def test_map_cache_round_trip(saddle_map, tmp_path):
    path = str(tmp_path / "map.joblib")
    saddle_map.save(path)
    loaded = CombinatorialMap.load(path)
    assert loaded.digest() == saddle_map.digest()
    assert loaded.grid == saddle_map.grid
    assert loaded.strategy == Fixed(0.1)


def test_map_cache_detects_tampering(saddle_map, tmp_path):
    path = str(tmp_path / "map.joblib")
    saddle_map.save(path)
    payload = joblib.load(path)
    payload["targets"] = payload["targets"][::-1].copy()
    joblib.dump(payload, path)
    with pytest.raises(ValueError):
        CombinatorialMap.load(path)


def test_tube_map(saddle, small_grid):
    tube = build_tube_map(saddle, small_grid, Fixed(0.1))
    assert not tube.failed_mask.any()
    for cell in range(small_grid.n_cells):
        assert cell in tube.tube_cells(cell)
        assert cell in tube.flow_cells(cell)
        assert tube.flow_cells(cell).issubset(tube.tube_cells(cell))
    assert tube.tube_exits(small_grid.linear_index((7, 7)))
    assert tube.tube_exits(small_grid.linear_index((4, 0)))
    assert tube.digest() == build_tube_map(saddle, small_grid, Fixed(0.1)).digest()


def test_adaptive_division_by_zero_becomes_failed_cells():
    g = Grid([(-1, 1)], [4])
    fmap = build_map(VectorField.from_sources(["1/x1"]), g, Adaptive(4.0, 0.1))
    for cell in (1, 2):
        assert fmap.status[cell] == FlowStatus.NONPOSITIVE_STEP
        assert fmap.images(cell) == g.all_cells()
    assert fmap.failure_reasons()["nonpositive_step"] == 2
    with pytest.raises(ValueError):
        tau_interval(VectorField.from_sources(["1/x1"]), g, 1, Adaptive(4.0, 0.1))


@pytest.mark.parametrize("strategy,reason", [
    (Fixed(0.1), "unbounded_interval"),
    (Adaptive(4.0, 0.1), "nonpositive_step"),
])
def test_sqrt_of_negative_domain_becomes_failed_cells(strategy, reason):
    f = VectorField.from_sources(["sqrt(x1)"])
    g = Grid([(-2, -1)], [2])
    fmap = build_map(f, g, strategy)
    assert fmap.failure_reasons() == {reason: 2}
    tube = build_tube_map(f, g, strategy)
    assert tube.failed_mask.all()


def test_unbounded_speed_is_not_a_valid_step():
    f = VectorField.from_sources(["x1^400"])
    g = Grid([(10, 20)], [2])
    fmap = build_map(f, g, Adaptive(4.0, 0.1))
    assert fmap.failure_reasons() == {"nonpositive_step": 2}
    with pytest.raises(ValueError):
        tau_interval(f, g, 0, Adaptive(4.0, 0.1))


@pytest.mark.parametrize("small,large", [(0.01, 0.1), (0.1, 0.5), (0.5, 2.0)])
def test_larger_delta_never_raises_tau(two_cycles, small_grid, small, large):
    for cell in range(small_grid.n_cells):
        before = tau_interval(two_cycles, small_grid, cell, Adaptive(4.0, small))
        after = tau_interval(two_cycles, small_grid, cell, Adaptive(4.0, large))
        assert float(after.hi) <= float(before.hi)
