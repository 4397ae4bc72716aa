#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
morsescope - 常微分方程式の流れに対する精度保証付き Morse 分解・Conley 指数

使用方法:
    python scripts/morsescope.py analyze --config configs/two_cycles_adaptive.json
    python scripts/morsescope.py analyze --system two_cycles --param mu=2 \\
        --domain=-3:3,-3:3 --depth 8 --strategy adaptive --verify --index
    python scripts/morsescope.py render --report out/report.json
    python scripts/morsescope.py selftest
    python scripts/morsescope.py schema report
"""

import argparse
import json
import sys
from pathlib import Path

# プロジェクトルートを追加
project_root = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(project_root))

try:
    from app.config import AnalysisConfig, ConfigError, flags_to_overrides, load_config
    from app.logging_config import setup_logging
    from app.pipeline import EXIT_CONFIG, EXIT_ERROR, config_error_report, run_analysis
    from app.render import render_report, write_text
    from app.report import MissingArtifact, load_report, load_schema
    from app.selftest import CHECKS, run_selftest
except ImportError as e:
    print(f"❌ エラー: 必要なモジュールをインポートできません: {e}")
    print("プロジェクトルートから実行してください: python scripts/morsescope.py")
    sys.exit(1)


def add_analyze_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="設定ファイル（JSON）。フラグはファイルより優先")
    parser.add_argument("--system", help="組み込み系 (two_cycles, circle_demo, linear)")
    parser.add_argument("--param", action="append", metavar="K=V",
                        help="パラメータ（繰り返し可、数列は 1,2,3）")
    parser.add_argument("--expr", action="append", metavar="EXPR",
                        help="ベクトル場の成分式（次元ごとに 1 回ずつ）")
    parser.add_argument("--domain", help="領域 lo:hi,lo:hi（負の値は --domain=-1:1 の形で渡す）")
    grid = parser.add_mutually_exclusive_group()
    grid.add_argument("--depth", type=int, help="各次元 2^depth 分割")
    grid.add_argument("--divisions", help='各次元の分割数 "k1,k2"')
    parser.add_argument("--strategy", choices=["fixed", "adaptive", "expression"], help="時間刻み戦略")
    parser.add_argument("--h", type=float, help="fixed 戦略の時間刻み")
    parser.add_argument("--D", type=float, help="adaptive 戦略の D（既定 4）")
    parser.add_argument("--delta", type=float, help="adaptive 戦略の δ（既定 0.1）")
    parser.add_argument("--tau", help="expression 戦略の τ 式")
    parser.add_argument("--order", type=int, help="Taylor 次数（既定 3）")
    parser.add_argument("--max-substeps", dest="max_substeps", type=int, help="1 セルあたりの刻み数の上限（既定 10000）")
    parser.add_argument("--max-step", dest="max_step", type=float, help="刻みの上限（既定 0.25）")
    parser.add_argument("--min-step", dest="min_step", type=float, help="これより小さい刻みは爆発とみなす（既定 1e-12）")
    parser.add_argument("--blowup-bound", dest="blowup_bound", type=float, help="包含の大きさの上限（既定 1e8）")
    parser.add_argument("--tube-segments", dest="tube_segments", type=int, help="チューブの最小分割数（既定 4）")
    parser.add_argument("--collar", type=int, help="孤立化近傍の層数（既定 2）")
    parser.add_argument("--verify", action="store_true", help="判定基準 (A)/(B) を検証する")
    parser.add_argument("--index", action="store_true", help="Conley 指数を計算する")
    parser.add_argument("--out-dir", dest="out_dir", help="出力ディレクトリ（既定 out）")
    parser.add_argument("--map-cache", dest="map_cache", help="写像キャッシュのパス")
    parser.add_argument("--workers", type=int, help="並列数（既定 MORSESCOPE_WORKERS または 1）")
    parser.add_argument("--quiet", action="store_true", help="進捗表示を抑える")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="morsescope",
        description="常微分方程式の流れに対する精度保証付き Morse 分解と Conley 指数",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--log-json", action="store_true", default=None, help="JSON 形式でログを出す")
    parser.add_argument("--log-level", help="ログレベル（既定 INFO）")
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", help="解析を実行してレポート・DOT・SVG を書き出す")
    add_analyze_flags(analyze)

    render = sub.add_parser("render", help="レポートから SVG を再描画する")
    render.add_argument("--report", default="out/report.json", help="レポートのパス")
    render.add_argument("--out", help="SVG の出力先（既定はレポートと同じ場所の morse.svg）")

    selftest = sub.add_parser("selftest", help="組み込みフィクスチャで自己診断する")
    selftest.add_argument("--tamper", choices=CHECKS, help=argparse.SUPPRESS)

    schema = sub.add_parser("schema", help="JSON スキーマを表示する")
    schema.add_argument("which", choices=["config", "report"])
    return parser


def cmd_analyze(args) -> int:
    try:
        config = load_config(args.config, flags_to_overrides(args))
    except ConfigError as e:
        print(f"❌ 設定エラー: {e}", file=sys.stderr)
        config_error_report(e, args.out_dir)
        return EXIT_CONFIG
    code, _ = run_analysis(config, quiet=args.quiet)
    return code


def cmd_render(args) -> int:
    try:
        report = load_report(args.report)
        out = Path(args.out) if args.out else Path(args.report).with_name("morse.svg")
        write_text(render_report(report), out)
    except MissingArtifact as e:
        print(f"❌ 成果物がありません: {e}", file=sys.stderr)
        return EXIT_ERROR
    print(f"✅ SVG を書き出しました: {out}")
    return 0


def cmd_selftest(args) -> int:
    return 0 if run_selftest(tamper=args.tamper) else 1


def cmd_schema(args) -> int:
    if args.which == "config":
        schema = AnalysisConfig.model_json_schema()
    else:
        schema = load_schema()
    print(json.dumps(schema, indent=2, ensure_ascii=False))
    return 0


def main(argv=None) -> int:
    """メイン関数"""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level, args.log_json)
    if args.command == "analyze":
        return cmd_analyze(args)
    if args.command == "render":
        return cmd_render(args)
    if args.command == "selftest":
        return cmd_selftest(args)
    return cmd_schema(args)


if __name__ == "__main__":
    sys.exit(main())
