"""
morsescope アプリケーション層

- 設定（config）と構造化ログ（logging_config）
- 解析パイプライン（pipeline）
- レポート（report）と SVG/DOT 出力（render）
- 自己診断（selftest）
"""
