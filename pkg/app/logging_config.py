#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
ログ設定

- 通常はテキスト形式（logging.basicConfig 相当）
- --log-json または MORSESCOPE_LOG_FORMAT=json で python-json-logger の JSON 形式
- レベルは --log-level または MORSESCOPE_LOG_LEVEL（既定 INFO）
"""

import logging
import os
import sys
from typing import Optional

from pythonjsonlogger import jsonlogger

TEXT_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
JSON_FIELDS = "%(asctime)s %(levelname)s %(name)s %(message)s"


def setup_logging(level: Optional[str] = None, json_format: Optional[bool] = None) -> logging.Logger:
    """
    ルートロガーを設定する

    Args:
        level (str): ログレベル名（None なら環境変数、既定 INFO）
        json_format (bool): JSON 出力にするか（None なら環境変数）

    Returns:
        logging.Logger: ルートロガー
    """
    if level is None:
        level = os.environ.get("MORSESCOPE_LOG_LEVEL", "INFO")
    if json_format is None:
        json_format = os.environ.get("MORSESCOPE_LOG_FORMAT", "").lower() == "json"

    handler = logging.StreamHandler(sys.stderr)
    if json_format:
        handler.setFormatter(jsonlogger.JsonFormatter(JSON_FIELDS))
    else:
        handler.setFormatter(logging.Formatter(TEXT_FORMAT))

    root = logging.getLogger()
    for old in list(root.handlers):
        root.removeHandler(old)
    root.addHandler(handler)
    root.setLevel(level.upper())
    return root
