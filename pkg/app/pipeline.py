#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
morsescope 解析パイプライン
包含写像 → Morse 分解 → 流れへの持ち上げ検証 → Conley 指数 → レポート出力

終了コード:
    0: 完了（検証ありなら certified）
    2: 設定エラー
    3: 検証で棄却
    4: 積分失敗セルが全体の 50% を超えた
    1: 予期しないエラー
"""

import logging
import time
from datetime import datetime
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

from dynamics import MorsescopeError
from dynamics.enclosure import CombinatorialMap, Fixed, TubeMap, build_map, build_tube_map
from dynamics.vfield import ExpressionError
from analysis.conley import ConleyError, ConleyIndex, conley_index
from analysis.homology import export_complex
from analysis.morse import MorseDecomposition, decompose, to_dot
from analysis.verify import VerificationReport, check_criterion
from app.config import AnalysisConfig, ConfigError
from app.render import render_svg, write_text
from app.report import CellCounts, Report, RunStatus, morse_section, write_report

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_REJECTED = 3
EXIT_INTEGRATION = 4
PERVASIVE_FAILURE_FRACTION = 0.5


class AnalysisPipeline:
    """解析パイプラインクラス"""

    def __init__(self, config: AnalysisConfig, quiet: bool = False):
        self.config = config
        self.quiet = quiet
        self.report = Report(config=config.echo())
        self.messages: List[str] = []
        self.exit_code = EXIT_OK

        self.field = None
        self.grid = None
        self.strategy = None
        self.integrator = None
        self.fmap: Optional[CombinatorialMap] = None
        self.md: Optional[MorseDecomposition] = None
        self.tube: Optional[TubeMap] = None
        self.verification: Optional[VerificationReport] = None
        self.indices: List[ConleyIndex] = []
        self.written: Dict[str, Path] = {}

        self._print("🔭 morsescope - Morse 分解と Conley 指数の精度保証付き計算")
        self._print("=" * 60)
        self._print(f"📅 実行時刻: {datetime.now().strftime('%Y年%m月%d日 %H:%M:%S')}")
        system = config.system.builtin or "式で指定"
        self._print(f"🌀 ベクトル場: {system}")
        self._print(f"⏱️  時間刻み: {config.strategy.kind}")
        self._print(f"🔍 検証: {'有効' if config.run_verify else '無効'} / "
                    f"Conley 指数: {'有効' if config.run_index else '無効'}")
        self._print("=" * 60)

    def _print(self, text: str):
        if not self.quiet:
            print(text)

    def _timed(self, stage: str, func: Callable):
        start = time.perf_counter()
        try:
            return func()
        finally:
            self.report.timings_ms[stage] = round((time.perf_counter() - start) * 1000.0, 3)

    # ------------------------------------------------------------------
    # 各ステップ
    # ------------------------------------------------------------------
    def step1_setup(self) -> bool:
        """Step 1: ベクトル場・グリッド・戦略の構築"""
        self._print("🧩 Step 1: ベクトル場とグリッドを準備中...")
        try:
            self.field = self.config.system.build()
            self.grid = self.config.grid()
            self.strategy = self.config.strategy.build()
            self.integrator = self.config.integrator.build()
        except (ExpressionError, MorsescopeError, ValueError) as e:
            self.exit_code = EXIT_CONFIG
            self.messages.append(f"設定エラー: {e}")
            self._print(f"❌ Step 1エラー: {e}")
            return False
        self.report.vector_field = self.field.describe()
        self.report.grid = self.grid.describe()
        self.report.strategy = self.strategy.describe()
        self._print("✅ Step 1完了")
        self._print(f"   📐 次元 {self.field.dim}, セル数 {self.grid.n_cells:,} {self.grid.divisions}")
        return True

    def _cached_map(self) -> Optional[CombinatorialMap]:
        path = self.config.outputs.map_cache
        if not path or not Path(path).exists():
            return None
        try:
            fmap = CombinatorialMap.load(path)
        except (ValueError, OSError, KeyError) as e:
            logger.warning(f"写像キャッシュを使えません（再構築します）: {e}")
            return None
        header = fmap.header
        same = (fmap.grid == self.grid
                and header.get("strategy") == self.strategy.describe()
                and header.get("field") == self.field.describe()
                and header.get("integrator") == self.integrator.as_dict())
        if not same:
            logger.warning(f"写像キャッシュの設定が異なるため再構築します: {path}")
            return None
        return fmap

    def step2_build_map(self) -> bool:
        """Step 2: 組合せ的包含写像の構築"""
        self._print("🧮 Step 2: 包含写像 𝓕 を構築中...")
        try:
            fmap = self._cached_map()
            if fmap is not None:
                self._print(f"   💾 キャッシュを使用: {self.config.outputs.map_cache}")
            else:
                fmap = self._timed("build_map", lambda: build_map(
                    self.field, self.grid, self.strategy, self.integrator,
                    workers=self.config.resolved_workers(), chunk_size=self.config.chunk_size))
                if self.config.outputs.map_cache:
                    Path(self.config.outputs.map_cache).parent.mkdir(parents=True, exist_ok=True)
                    fmap.save(self.config.outputs.map_cache)
        except Exception as e:
            logger.exception("包含写像の構築に失敗しました")
            self.exit_code = EXIT_ERROR
            self.messages.append(f"包含写像の構築に失敗: {e}")
            self._print(f"❌ Step 2エラー: {e}")
            return False

        self.fmap = fmap
        self.report.map_digest = fmap.digest()
        self.report.cells = CellCounts(total=fmap.n_cells, failed=fmap.n_failed,
                                       exits_domain=int(fmap.exits.sum()),
                                       failure_reasons=fmap.failure_reasons())
        self._print("✅ Step 2完了")
        self._print(f"   🔗 辺数 {fmap.targets.size:,}, 失敗セル {fmap.n_failed:,}")
        if fmap.n_failed > PERVASIVE_FAILURE_FRACTION * fmap.n_cells:
            self.exit_code = EXIT_INTEGRATION
            self.messages.append(f"積分失敗セルが {fmap.n_failed}/{fmap.n_cells} あります")
            self._print("⚠️  Step 2警告: 積分失敗セルが過半数です（検証と指数計算は行いません）")
        return True

    def step3_morse(self) -> bool:
        """Step 3: Morse 集合と Morse グラフ"""
        self._print("🕸️  Step 3: Morse 分解を計算中...")
        try:
            self.md = self._timed("morse", lambda: decompose(self.fmap, self.config.max_graph_sets))
        except Exception as e:
            logger.exception("Morse 分解に失敗しました")
            self.exit_code = EXIT_ERROR
            self.messages.append(f"Morse 分解に失敗: {e}")
            self._print(f"❌ Step 3エラー: {e}")
            return False
        self.report.morse = morse_section(self.md, self.config.outputs.include_cells)
        census = self.md.census()
        self._print("✅ Step 3完了")
        self._print(f"   🧭 Morse 集合 {len(self.md.sets)} 個, Morse グラフの辺 {self.md.edges}")
        if census["count"] and census["singleton_fraction"] >= 0.5:
            self._print(f"   ⚠️  単一セルの集合が {census['singleton_fraction']:.0%}（偽 Morse 集合の疑い）")
        if self.md.graph_skipped:
            self.messages.append("Morse 集合が多すぎるため Morse グラフを省略しました")
        return True

    def _need_tube(self) -> bool:
        return self.config.run_index or (self.config.run_verify and not isinstance(self.strategy, Fixed))

    def step4_verify(self) -> bool:
        """Step 4: チューブ写像と判定基準 (A)/(B)"""
        if not (self.config.run_verify or self.config.run_index):
            self._print("⏭️  Step 4: 検証をスキップします")
            return True
        if self.exit_code == EXIT_INTEGRATION:
            self._print("⏭️  Step 4: 積分失敗が多いため検証をスキップします")
            return True
        self._print("🛡️  Step 4: チューブ写像と判定基準を検証中...")
        try:
            if self._need_tube():
                self.tube = self._timed("build_tube_map", lambda: build_tube_map(
                    self.field, self.grid, self.strategy, self.integrator,
                    workers=self.config.resolved_workers(), chunk_size=self.config.chunk_size))
                self.report.tube_digest = self.tube.digest()
            if self.config.run_verify:
                self.verification = self._timed(
                    "verify", lambda: check_criterion(self.md, self.tube, self.strategy))
                self.report.verification = self.verification.to_dict(self.config.outputs.include_cells)
        except Exception as e:
            logger.exception("検証に失敗しました")
            self.exit_code = EXIT_ERROR
            self.messages.append(f"検証に失敗: {e}")
            self._print(f"❌ Step 4エラー: {e}")
            return False

        if self.verification is not None:
            if self.verification.certified:
                self._print(f"✅ Step 4完了: 判定基準 ({self.verification.mode}) で認定")
            else:
                self.exit_code = max(self.exit_code, EXIT_REJECTED)
                self.messages.extend(self.verification.reasons)
                self._print(f"⚠️  Step 4完了: 棄却（{len(self.verification.reasons)} 件の違反）")
        else:
            self._print("✅ Step 4完了: チューブ写像を構築しました")
        return True

    def step5_conley(self) -> bool:
        """Step 5: 指数対と相対ホモロジー"""
        if not self.config.run_index or self.tube is None:
            self._print("⏭️  Step 5: Conley 指数をスキップします")
            return True
        n_sets = len(self.md.sets)
        if n_sets > self.config.max_index_sets:
            self.messages.append(f"Morse 集合が {n_sets} 個のため Conley 指数を省略しました")
            self._print(f"⏭️  Step 5: Morse 集合が多すぎます（{n_sets} > {self.config.max_index_sets}）")
            return True

        self._print("🧷 Step 5: Conley 指数を計算中...")
        entries = []
        start = time.perf_counter()
        for p in range(n_sets):
            try:
                index = conley_index(self.md, p, self.fmap, self.tube,
                                     self.config.collar, self.config.collar_retries)
            except ConleyError as e:
                logger.warning(f"Morse 集合 {p} の Conley 指数を計算できません: {e}")
                entries.append({"set": p, "error": str(e)})
                self._print(f"   ⚠️  N{p}: {e}")
                continue
            self.indices.append(index)
            entries.append(index.to_dict(self.config.outputs.include_cells))
            torsion = f", ねじれ {list(index.homology.torsion)}" if index.homology.has_torsion else ""
            self._print(f"   📊 N{p}: ベッチ数 {index.homology.betti}（collar={index.collar}）{torsion}")
        self.report.timings_ms["conley"] = round((time.perf_counter() - start) * 1000.0, 3)
        self.report.conley = entries
        self._print(f"✅ Step 5完了: {len(self.indices)}/{n_sets} 個の指数を計算")
        return True

    def step6_outputs(self) -> bool:
        """Step 6: レポート・DOT・SVG の書き出し（途中で失敗しても実行）"""
        self._print("💾 Step 6: 成果物を書き出し中...")
        out = self.config.outputs
        try:
            if self.md is not None:
                self.written["dot"] = write_text(to_dot(self.md, name="morse"), out.path(out.dot))
                collars = None
                if self.verification is not None and self.verification.mode == "B":
                    collars = {p: c.z_cells - self.md.sets[p] for p, c in self.verification.per_set.items()}
                title = f"{self.field.name}: {len(self.md.sets)} Morse sets"
                self.written["svg"] = write_text(render_svg(self.grid, self.md.sets, collars, title),
                                                 out.path(out.svg))
            if out.export_complex:
                for index in self.indices:
                    text = export_complex(self.grid, index.pair.P1, index.pair.P2)
                    self.written[f"complex_{index.p}"] = write_text(text, out.path(f"complex_{index.p}.txt"))

            self.report.status = RunStatus(exit_code=self.exit_code, outcome=self._outcome(),
                                           messages=list(self.messages))
            self.written["report"] = write_report(self.report, out.path(out.report))
        except Exception as e:
            logger.exception("成果物の書き出しに失敗しました")
            self.exit_code = EXIT_ERROR
            self._print(f"❌ Step 6エラー: {e}")
            return False
        self._print("✅ Step 6完了")
        for kind, path in sorted(self.written.items()):
            self._print(f"   📁 {kind}: {path}")
        return True

    def _outcome(self) -> str:
        return {
            EXIT_CONFIG: "config_error",
            EXIT_REJECTED: "rejected",
            EXIT_INTEGRATION: "integration_failure",
            EXIT_ERROR: "error",
        }.get(self.exit_code, "certified" if self.verification is not None else "completed")

    def run_pipeline(self) -> int:
        """パイプラインを実行し、終了コードを返す"""
        start_time = datetime.now()
        steps: List[Tuple[str, Callable[[], bool]]] = [
            ("準備", self.step1_setup),
            ("包含写像", self.step2_build_map),
            ("Morse 分解", self.step3_morse),
            ("検証", self.step4_verify),
            ("Conley 指数", self.step5_conley),
        ]
        completed = 0
        for i, (step_name, step_func) in enumerate(steps, 1):
            self._print(f"\n{'=' * 60}")
            self._print(f"Step {i}/6: {step_name}")
            self._print("=" * 60)
            if step_func():
                completed += 1
            else:
                self._print(f"\n❌ パイプライン中断: Step {i}でエラーが発生しました")
                break

        self._print(f"\n{'=' * 60}")
        self._print("Step 6/6: 成果物の書き出し")
        self._print("=" * 60)
        if self.step6_outputs():
            completed += 1

        elapsed = datetime.now() - start_time
        self._print(f"\n{'=' * 60}")
        self._print("🎯 解析パイプライン実行結果")
        self._print("=" * 60)
        self._print(f"⏱️  実行時間: {elapsed.total_seconds():.1f}秒")
        self._print(f"✅ 成功ステップ: {completed}/6")
        self._print(f"🏁 結果: {self._outcome()}（終了コード {self.exit_code}）")
        for message in self.messages[:10]:
            self._print(f"   • {message}")
        return self.exit_code


def run_analysis(config: AnalysisConfig, quiet: bool = False) -> Tuple[int, AnalysisPipeline]:
    """設定済みのパイプラインを 1 回実行する"""
    pipeline = AnalysisPipeline(config, quiet=quiet)
    return pipeline.run_pipeline(), pipeline


def config_error_report(error: ConfigError, out_dir: Optional[str]) -> Optional[Path]:
    """設定エラー時の最小レポート（出力先が分かる場合のみ）"""
    if not out_dir:
        return None
    report = Report(status=RunStatus(exit_code=EXIT_CONFIG, outcome="config_error", messages=[str(error)]))
    return write_report(report, Path(out_dir) / "report.json")
