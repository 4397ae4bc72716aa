#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
解析レポート

- pydantic の Report モデル（JSON 直列化）
- 同梱スキーマ schemas/report.schema.json による jsonschema 検証
- 決定性ハッシュ（timings_ms を除いた正規 JSON の SHA-256）
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import jsonschema
from pydantic import BaseModel, Field

from dynamics import MorsescopeError
from dynamics.interval import ROUNDING_MODE

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
SCHEMA_PATH = Path(__file__).resolve().parent.parent / "schemas" / "report.schema.json"


class MissingArtifact(MorsescopeError):
    """描画などに必要な成果物（レポート、セル一覧）がない"""


class CellCounts(BaseModel):
    total: int
    failed: int
    exits_domain: int
    failure_reasons: Dict[str, int] = Field(default_factory=dict)


class MorseSetEntry(BaseModel):
    index: int
    size: int
    failed_cells: int = 0
    cells: Optional[List[int]] = None


class MorseSection(BaseModel):
    count: int
    sets: List[MorseSetEntry]
    edges: List[Tuple[int, int]]
    graph_skipped: bool = False
    census: Dict[str, Any]


class RunStatus(BaseModel):
    exit_code: int = 0
    outcome: str = "completed"
    messages: List[str] = Field(default_factory=list)


class Report(BaseModel):
    """解析 1 回分のレポート"""

    schema_version: int = REPORT_SCHEMA_VERSION
    tool: str = "morsescope"
    rounding: str = ROUNDING_MODE
    config: Optional[Dict[str, Any]] = None
    vector_field: Optional[Dict[str, Any]] = None
    grid: Optional[Dict[str, Any]] = None
    strategy: Optional[Dict[str, Any]] = None
    timings_ms: Dict[str, float] = Field(default_factory=dict)
    cells: Optional[CellCounts] = None
    map_digest: Optional[str] = None
    tube_digest: Optional[str] = None
    morse: Optional[MorseSection] = None
    verification: Optional[Dict[str, Any]] = None
    conley: Optional[List[Dict[str, Any]]] = None
    status: RunStatus = Field(default_factory=RunStatus)
    determinism_hash: Optional[str] = None

    def canonical(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", exclude={"timings_ms", "determinism_hash"})

    def seal(self) -> str:
        """決定性ハッシュを計算して格納する"""
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"), ensure_ascii=True)
        self.determinism_hash = hashlib.sha256(text.encode("utf-8")).hexdigest()
        return self.determinism_hash

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, ensure_ascii=False) + "\n"


def morse_section(md, include_cells: bool = True) -> MorseSection:
    """MorseDecomposition からレポート用の要約を作る"""
    census = md.census()
    census = {
        "count": census["count"],
        "singleton_fraction": round(float(census["singleton_fraction"]), 6),
        "histogram": {str(k): v for k, v in census["histogram"].items()},
    }
    sets = [
        MorseSetEntry(index=p, size=len(s), failed_cells=int(md.failed_in_sets[p]),
                      cells=s.tolist() if include_cells else None)
        for p, s in enumerate(md.sets)
    ]
    return MorseSection(count=len(md.sets), sets=sets, edges=[tuple(e) for e in md.edges],
                        graph_skipped=md.graph_skipped, census=census)


def load_schema() -> Dict[str, Any]:
    with open(SCHEMA_PATH, "r", encoding="utf-8") as fh:
        return json.load(fh)


def validate_report(data: Union[Report, Dict[str, Any]]) -> None:
    """同梱スキーマで検証（違反時は jsonschema.ValidationError）"""
    if isinstance(data, Report):
        data = data.model_dump(mode="json")
    jsonschema.Draft7Validator(load_schema()).validate(data)


def write_report(report: Report, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    report.seal()
    validate_report(report)
    path.write_text(report.to_json(), encoding="utf-8")
    logger.info(f"レポートを書き出しました: {path}")
    return path


def load_report(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"レポートがありません: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise MissingArtifact(f"レポートを読めません: {path}: {e}") from e
    validate_report(data)
    return data
