# -*- coding: utf-8 -*-
"""コマンドライン（scripts/morsescope.py）のテスト"""

import importlib.util
import json
import logging
from pathlib import Path

import pytest

SCRIPT = Path(__file__).resolve().parent.parent / "scripts" / "morsescope.py"


@pytest.fixture(scope="module")
def cli():
    spec = importlib.util.spec_from_file_location("morsescope_cli", SCRIPT)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


@pytest.fixture(autouse=True)
def restore_logging():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    for handler in list(root.handlers):
        root.removeHandler(handler)
    for handler in handlers:
        root.addHandler(handler)
    root.setLevel(level)


SADDLE_FLAGS = ["--system", "linear", "--param", "lambdas=-1,1", "--domain=-1:1,-1:1",
                "--divisions", "4,4", "--strategy", "fixed", "--h", "0.1", "--quiet"]


def test_schema_commands(cli, capsys):
    assert cli.main(["schema", "config"]) == 0
    schema = json.loads(capsys.readouterr().out)
    assert "domain" in schema["properties"]
    assert cli.main(["schema", "report"]) == 0
    assert json.loads(capsys.readouterr().out)["title"] == "morsescope analysis report"


def test_selftest_command(cli, capsys):
    assert cli.main(["selftest"]) == 0
    assert "合格" in capsys.readouterr().out
    assert cli.main(["selftest", "--tamper", "homology"]) == 1


@pytest.mark.slow
def test_analyze_then_render(cli, tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["analyze", *SADDLE_FLAGS, "--out-dir", str(out)]) == 0
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert report["grid"]["divisions"] == [4, 4]
    assert report["config"]["strategy"]["kind"] == "fixed"

    svg = tmp_path / "again.svg"
    assert cli.main(["render", "--report", str(out / "report.json"), "--out", str(svg)]) == 0
    assert svg.read_bytes() == (out / "morse.svg").read_bytes()


def test_analyze_config_error(cli, tmp_path, capsys):
    code = cli.main(["analyze", "--domain=-1:1", "--out-dir", str(tmp_path), "--quiet"])
    assert code == 2
    assert "設定エラー" in capsys.readouterr().err
    report = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
    assert report["status"]["outcome"] == "config_error"


def test_render_missing_report(cli, tmp_path):
    assert cli.main(["render", "--report", str(tmp_path / "none.json")]) == 1


def test_depth_and_divisions_are_exclusive(cli):
    with pytest.raises(SystemExit) as info:
        cli.main(["analyze", "--depth", "3", "--divisions", "4,4"])
    assert info.value.code == 2


def test_json_logging(cli, capsys):
    cli.main(["--log-json", "--log-level", "WARNING", "schema", "config"])
    root = logging.getLogger()
    assert root.level == logging.WARNING
    assert type(root.handlers[0].formatter).__name__ == "JsonFormatter"
