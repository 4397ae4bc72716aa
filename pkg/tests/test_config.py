# -*- coding: utf-8 -*-
"""設定の読み込み・マージ・検証のテスト"""

import argparse
import json
from pathlib import Path

import pytest

from app.config import AnalysisConfig, ConfigError, deep_merge, flags_to_overrides, load_config
from dynamics.enclosure import Adaptive, Expression, Fixed

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def flags(**kwargs):
    return argparse.Namespace(**kwargs)


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.json")), ids=lambda p: p.stem)
def test_bundled_configs_are_valid(path):
    config = load_config(path)
    assert config.grid().n_cells > 0
    config.system.build()
    config.strategy.build()


def test_two_cycles_adaptive_config():
    config = load_config(CONFIG_DIR / "two_cycles_adaptive.json")
    assert config.grid().shape == (256, 256)
    assert config.strategy.build() == Adaptive(4.0, 0.1)
    assert config.run_verify and config.run_index


def test_circle_demo_uses_expression_strategy():
    config = load_config(CONFIG_DIR / "circle_demo.json")
    assert isinstance(config.strategy.build(), Expression)


def test_flags_override_file(tmp_path):
    overrides = flags_to_overrides(flags(depth=5, strategy="fixed", h=0.01, collar=3, verify=True))
    config = load_config(CONFIG_DIR / "two_cycles_adaptive.json", overrides)
    assert config.depth == 5
    assert config.collar == 3
    assert config.strategy.build() == Fixed(0.01)
    # ファイル側の値は残る
    assert config.system.params == {"mu": 2.0}


def test_integrator_flags_override_file():
    overrides = flags_to_overrides(flags(order=4, max_substeps=200, max_step=0.1, blowup_bound=1e6))
    assert overrides["integrator"] == {"order": 4, "max_substeps": 200, "max_step": 0.1, "blowup_bound": 1e6}
    cfg = load_config(CONFIG_DIR / "two_cycles_adaptive.json", overrides).integrator.build()
    assert (cfg.taylor_order, cfg.max_substeps, cfg.max_step, cfg.blowup_bound) == (4, 200, 0.1, 1e6)
    # 指定しなかった項目は既定値のまま
    assert cfg.min_step == 1e-12
    assert cfg.tube_segments == 4


def test_divisions_replace_depth(tmp_path):
    config = load_config(CONFIG_DIR / "two_cycles_fixed.json", flags_to_overrides(flags(divisions="6,10")))
    assert config.depth is None
    assert config.grid().shape == (6, 10)

    path = tmp_path / "div.json"
    path.write_text(json.dumps({"domain": [["0", "1"]], "divisions": [4]}), encoding="utf-8")
    config = load_config(path, {"depth": 3, "system": {"builtin": "linear", "params": {"lambdas": [-1]}}})
    assert config.divisions is None
    assert config.grid().shape == (8,)


def test_parse_system_flags():
    overrides = flags_to_overrides(flags(system="linear", param=["lambdas=-1,2"], domain="-1:1,-2:2"))
    assert overrides["system"] == {"builtin": "linear", "params": {"lambdas": [-1.0, 2.0]}}
    assert overrides["domain"] == [["-1", "1"], ["-2", "2"]]
    config = load_config(None, overrides)
    assert config.system.build().dim == 2


def test_expressions_replace_builtin():
    overrides = flags_to_overrides(flags(expr=["-x1", "a * x2"], param=["a=0.5"], domain="-1:1,-1:1"))
    config = load_config(None, overrides)
    assert config.system.builtin is None
    assert config.system.build().dim == 2


@pytest.mark.parametrize("kwargs", [
    {"param": ["mu"]},
    {"param": ["=2"]},
    {"domain": "1,2"},
    {"divisions": "4,x"},
])
def test_bad_flags(kwargs):
    with pytest.raises(ConfigError):
        flags_to_overrides(flags(**kwargs))


@pytest.mark.parametrize("data", [
    {},
    {"domain": []},
    {"domain": [["0"]]},
    {"domain": [["0", "1"]], "divisions": [2, 2]},
    {"domain": [["0", "1"]], "strategy": {"kind": "fixed"}},
    {"domain": [["0", "1"]], "strategy": {"kind": "adaptive", "D": 0.5}},
    {"domain": [["0", "1"]], "integrator": {"order": 9}},
    {"domain": [["0", "1"]], "system": {"expressions": ["x1 +"]}},
    {"domain": [["0", "1"]], "system": {"expressions": ["x1 * k"]}},
    {"domain": [["0", "1"], ["0", "1"]], "system": {"builtin": "lorenz"}},
    {"domain": [["0", "1"]], "system": {"builtin": "two_cycles"}},
])
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        load_config(None, data)


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{ not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(broken)
    listing = tmp_path / "list.json"
    listing.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(listing)


def test_workers_from_environment(monkeypatch):
    config = AnalysisConfig(domain=[["0", "1"]])
    monkeypatch.setenv("MORSESCOPE_WORKERS", "3")
    assert config.resolved_workers() == 3
    monkeypatch.delenv("MORSESCOPE_WORKERS")
    assert config.resolved_workers() == 1
    assert AnalysisConfig(domain=[["0", "1"]], workers=2).resolved_workers() == 2


def test_echo_excludes_outputs():
    config = AnalysisConfig(domain=[["-3", "3"], [-3, 3]], workers=4)
    echo = config.echo()
    assert "outputs" not in echo and "workers" not in echo
    assert echo["domain"][0] == ["-3", "3"]
    assert all(isinstance(v, str) for pair in echo["domain"] for v in pair)


def test_deep_merge_ignores_none():
    merged = deep_merge({"a": {"b": 1, "c": 2}, "d": 3}, {"a": {"b": 5}, "d": None})
    assert merged == {"a": {"b": 5, "c": 2}, "d": 3}
