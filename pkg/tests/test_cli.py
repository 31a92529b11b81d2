import json
import subprocess
import sys
from pathlib import Path

import pytest

from opeval import cli

MINIMAL = str(Path(__file__).resolve().parents[1] / "configs" / "minimal.json")


def test_run_then_cached(tmp_path, capsys):
    assert cli.main(["run", "--config", MINIMAL, "--out", str(tmp_path)]) == 0
    assert "ran" in capsys.readouterr().out
    assert cli.main(["run", "--config", MINIMAL, "--out", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 5 and all("cached" in ln for ln in lines)


def test_stage_by_stage(tmp_path):
    for stage in ("collect", "fit", "ope", "cdope", "ops"):
        assert cli.main([stage, "--config", MINIMAL, "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["status"] == "complete"
    assert cli.main(["report", "--out", str(tmp_path), "--no-svg"]) == 0
    assert (tmp_path / "report" / "cdf").is_dir()


def test_seed_override(tmp_path):
    assert cli.main(["collect", "--config", MINIMAL, "--seed", "11", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "config.json").read_text())["seed"] == 11


@pytest.mark.parametrize("doc", ['{"env": {"discount": 2}}', '{"nope": 1}', "{oops"])
def test_config_error_exit_2(tmp_path, doc, capsys):
    p = tmp_path / "bad.json"
    p.write_text(doc)
    assert cli.main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "config error" in capsys.readouterr().err


def test_bad_workers_exit_2(tmp_path):
    assert cli.main(["collect", "--config", MINIMAL, "--workers", "0", "--out", str(tmp_path)]) == 2


def test_missing_upstream_exit_3(tmp_path, capsys):
    assert cli.main(["ope", "--config", MINIMAL, "--out", str(tmp_path)]) == 3
    assert "opeval collect" in capsys.readouterr().err


def test_report_without_outputs_exit_3(tmp_path):
    assert cli.main(["report", "--kind", "cdf", "--out", str(tmp_path)]) == 3


def test_workers_env(tmp_path, monkeypatch):
    seen = {}
    real = cli.run_pipeline

    def spy(cfg, out, stages, workers, force):
        seen["workers"] = workers
        return real(cfg, out, stages, workers, force)

    monkeypatch.setattr(cli, "run_pipeline", spy)
    monkeypatch.setenv("OPEVAL_WORKERS", "3")
    assert cli.main(["collect", "--config", MINIMAL, "--out", str(tmp_path)]) == 0
    assert seen["workers"] == 3
    assert cli.main(["collect", "--config", MINIMAL, "--workers", "1", "--out", str(tmp_path)]) == 0
    assert seen["workers"] == 1


def test_console_module(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "opeval.cli", "collect", "--config", MINIMAL,
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
