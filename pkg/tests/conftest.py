# -*- coding: utf-8 -*-
"""テスト共通のフィクスチャ"""

import sys
from pathlib import Path

import pytest

# プロジェクトルートを追加
project_root = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(project_root))

from dynamics.grid import Grid  # noqa: E402
from dynamics.integrator import IntegratorConfig  # noqa: E402
from dynamics.vfield import builtin  # noqa: E402


@pytest.fixture
def saddle():
    """x1' = -x1, x2' = x2"""
    return builtin("linear", {"lambdas": [-1, 1]})


@pytest.fixture
def sink():
    return builtin("linear", {"lambdas": [-1, -1]})


@pytest.fixture
def two_cycles():
    return builtin("two_cycles", {"mu": 2})


@pytest.fixture
def small_grid():
    return Grid([(-1, 1), (-1, 1)], [8, 8])


@pytest.fixture
def integrator_config():
    return IntegratorConfig()
