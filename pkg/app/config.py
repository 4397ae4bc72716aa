#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
解析設定

- pydantic モデル（AnalysisConfig とその入れ子）
- 優先順位: 組み込み既定値 < --config ファイル < コマンドラインフラグ
- 並列数は --workers がなければ MORSESCOPE_WORKERS
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from dynamics import MorsescopeError
from dynamics.enclosure import Adaptive, Expression, Fixed, StepStrategy
from dynamics.grid import Grid
from dynamics.integrator import IntegratorConfig
from dynamics.vfield import ExpressionError, VectorField, builtin

logger = logging.getLogger(__name__)

Number = Union[float, str]


class ConfigError(MorsescopeError):
    """設定の読み込み・検証エラー（終了コード 2）"""


class SystemSpec(BaseModel):
    """組み込み系の名前とパラメータ、または成分ごとの式"""

    builtin: Optional[str] = "two_cycles"
    expressions: Optional[List[str]] = None
    params: Dict[str, Union[float, str, List[float]]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _one_source(self):
        if self.expressions:
            self.builtin = None
        if not self.builtin and not self.expressions:
            raise ValueError("system には builtin か expressions のどちらかが必要です")
        return self

    def build(self) -> VectorField:
        if self.expressions:
            return VectorField.from_sources(self.expressions, self.params, name="custom")
        return builtin(self.builtin, self.params)


class StrategySpec(BaseModel):
    """時間刻み戦略"""

    kind: Literal["fixed", "adaptive", "expression"] = "adaptive"
    h: Optional[float] = None
    D: float = 4.0
    delta: float = 0.1
    tau: Optional[str] = None

    @model_validator(mode="after")
    def _complete(self):
        if self.kind == "fixed" and (self.h is None or self.h <= 0):
            raise ValueError("fixed 戦略には正の h が必要です")
        if self.kind == "adaptive" and (self.D <= 1 or self.delta <= 0):
            raise ValueError("adaptive 戦略は D > 1, delta > 0 が必要です")
        if self.kind == "expression" and not self.tau:
            raise ValueError("expression 戦略には tau 式が必要です")
        return self

    def build(self) -> StepStrategy:
        if self.kind == "fixed":
            return Fixed(self.h)
        if self.kind == "adaptive":
            return Adaptive(self.D, self.delta)
        return Expression(self.tau)


class IntegratorSpec(BaseModel):
    """積分器の設定（IntegratorConfig に対応）"""

    order: int = Field(3, ge=1, le=5)
    max_substeps: int = Field(10_000, gt=0)
    max_step: float = Field(0.25, gt=0)
    inflation: float = Field(1.5, gt=1.0)
    max_picard_iters: int = Field(30, gt=0)
    min_step: float = Field(1e-12, gt=0)
    blowup_bound: float = Field(1e8, gt=0)
    tube_segments: int = Field(4, gt=0)
    remainder_abs_tol: float = Field(1e-9, gt=0)
    remainder_rel_tol: float = Field(1e-4, gt=0)

    def build(self) -> IntegratorConfig:
        return IntegratorConfig(
            taylor_order=self.order,
            max_substeps=self.max_substeps,
            max_step=self.max_step,
            inflation=self.inflation,
            max_picard_iters=self.max_picard_iters,
            min_step=self.min_step,
            blowup_bound=self.blowup_bound,
            tube_segments=self.tube_segments,
            remainder_abs_tol=self.remainder_abs_tol,
            remainder_rel_tol=self.remainder_rel_tol,
        )


class OutputSpec(BaseModel):
    """出力先"""

    out_dir: str = "out"
    report: str = "report.json"
    dot: str = "morse.dot"
    svg: str = "morse.svg"
    map_cache: Optional[str] = None
    include_cells: bool = True
    export_complex: bool = False

    def path(self, name: str) -> Path:
        return Path(self.out_dir) / name


class AnalysisConfig(BaseModel):
    """解析 1 回分の設定"""

    system: SystemSpec = Field(default_factory=SystemSpec)
    domain: List[List[Number]]
    depth: Optional[int] = Field(8, ge=1, le=16)
    divisions: Optional[List[int]] = None
    strategy: StrategySpec = Field(default_factory=StrategySpec)
    integrator: IntegratorSpec = Field(default_factory=IntegratorSpec)
    outputs: OutputSpec = Field(default_factory=OutputSpec)
    run_verify: bool = False
    run_index: bool = False
    collar: int = Field(2, ge=1)
    collar_retries: int = Field(3, ge=0)
    workers: Optional[int] = Field(None, ge=1)
    chunk_size: int = Field(4096, gt=0)
    max_graph_sets: int = Field(20000, gt=0)
    max_index_sets: int = Field(64, ge=0)

    @field_validator("domain")
    @classmethod
    def _intervals(cls, value):
        if not value:
            raise ValueError("domain が空です")
        for pair in value:
            if len(pair) != 2:
                raise ValueError(f"domain の各要素は [lo, hi]: {pair}")
        return value

    @model_validator(mode="after")
    def _grid_shape(self):
        if self.divisions is not None:
            if len(self.divisions) != len(self.domain):
                raise ValueError("divisions と domain の次元が一致しません")
            if any(k < 1 for k in self.divisions):
                raise ValueError("divisions は 1 以上")
        elif self.depth is None:
            raise ValueError("depth か divisions のどちらかが必要です")
        return self

    def grid(self) -> Grid:
        if self.divisions is not None:
            return Grid([tuple(p) for p in self.domain], self.divisions)
        return Grid.from_depth([tuple(p) for p in self.domain], self.depth)

    def resolved_workers(self) -> int:
        if self.workers is not None:
            return self.workers
        return max(1, int(os.environ.get("MORSESCOPE_WORKERS", "1")))

    def echo(self) -> Dict[str, Any]:
        """レポートに埋め込む設定（出力先は除く）"""
        data = self.model_dump(mode="json", exclude={"outputs", "workers"})
        data["domain"] = [[str(v) for v in pair] for pair in self.domain]
        return data


# ----------------------------------------------------------------------
# 読み込みとマージ
# ----------------------------------------------------------------------
def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """入れ子の辞書を再帰的に上書きする（None の値は無視）"""
    merged = dict(base)
    for key, value in override.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"設定ファイルが見つかりません: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"設定ファイルの JSON が不正です: {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"設定ファイルの最上位はオブジェクトである必要があります: {path}")
    return data


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Optional[Dict[str, Any]] = None) -> AnalysisConfig:
    """
    設定を組み立てて検証する

    Args:
        path: --config ファイル（任意）
        overrides (dict): フラグから作った上書き

    Returns:
        AnalysisConfig
    """
    data: Dict[str, Any] = {}
    if path is not None:
        data = read_config_file(path)
        logger.info(f"設定ファイルを読み込みました: {path}")
    overrides = overrides or {}
    data = deep_merge(data, overrides)
    if overrides.get("divisions") is not None:
        data["depth"] = None
    elif overrides.get("depth") is not None:
        data.pop("divisions", None)
    try:
        config = AnalysisConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"設定が不正です:\n{e}") from e
    try:
        field = config.system.build()
    except (ExpressionError, ValueError) as e:
        raise ConfigError(f"ベクトル場を構築できません: {e}") from e
    if field.dim != len(config.domain):
        raise ConfigError(f"ベクトル場の次元 {field.dim} と domain の次元 {len(config.domain)} が一致しません")
    return config


def _parse_value(text: str) -> Union[float, str, List[float]]:
    if "," in text:
        return [float(v) for v in text.split(",")]
    try:
        return float(text)
    except ValueError:
        return text


def flags_to_overrides(args) -> Dict[str, Any]:
    """
    argparse の結果を設定の上書き辞書に変換する

    指定されなかったフラグ（None）は含めない
    """
    try:
        system: Dict[str, Any] = {}
        if getattr(args, "system", None):
            system["builtin"] = args.system
        if getattr(args, "expr", None):
            system["expressions"] = list(args.expr)
        if getattr(args, "param", None):
            params = {}
            for item in args.param:
                key, sep, value = item.partition("=")
                if not sep or not key:
                    raise ConfigError(f"--param は k=v 形式です: {item}")
                params[key.strip()] = _parse_value(value.strip())
            system["params"] = params

        domain = None
        if getattr(args, "domain", None):
            domain = []
            for part in args.domain.split(","):
                lo, sep, hi = part.partition(":")
                if not sep:
                    raise ConfigError(f"--domain は lo:hi,lo:hi 形式です: {args.domain}")
                domain.append([lo.strip(), hi.strip()])

        divisions = None
        if getattr(args, "divisions", None):
            divisions = [int(k) for k in args.divisions.split(",")]
    except ValueError as e:
        raise ConfigError(f"フラグの値が不正です: {e}") from e

    strategy = {
        "kind": getattr(args, "strategy", None),
        "h": getattr(args, "h", None),
        "D": getattr(args, "D", None),
        "delta": getattr(args, "delta", None),
        "tau": getattr(args, "tau", None),
    }
    integrator = {
        "order": getattr(args, "order", None),
        "max_substeps": getattr(args, "max_substeps", None),
        "max_step": getattr(args, "max_step", None),
        "min_step": getattr(args, "min_step", None),
        "blowup_bound": getattr(args, "blowup_bound", None),
        "tube_segments": getattr(args, "tube_segments", None),
    }
    overrides = {
        "system": system or None,
        "domain": domain,
        "depth": getattr(args, "depth", None),
        "divisions": divisions,
        "strategy": {k: v for k, v in strategy.items() if v is not None} or None,
        "integrator": {k: v for k, v in integrator.items() if v is not None} or None,
        "outputs": {"out_dir": getattr(args, "out_dir", None),
                    "map_cache": getattr(args, "map_cache", None)},
        "run_verify": True if getattr(args, "verify", False) else None,
        "run_index": True if getattr(args, "index", False) else None,
        "collar": getattr(args, "collar", None),
        "workers": getattr(args, "workers", None),
    }
    return {k: v for k, v in overrides.items() if v is not None}
