from __future__ import annotations

import json
import socket
from pathlib import Path

import filelock
import pytest
from click.testing import CliRunner

from kgunlearn.cli import main


@pytest.fixture
def toy_dir(tmp_path) -> Path:
    out = tmp_path / "toy"
    result = CliRunner().invoke(main, ["toy", str(out), "--targets", "6"])
    assert result.exit_code == 0, result.output
    return out


def invoke(*args: str):
    return CliRunner().invoke(main, list(args))


def run_args(toy_dir: Path, run_dir: Path, *extra: str) -> list[str]:
    return ["--config", str(toy_dir / "config.ini"), "--run-dir", str(run_dir), *extra]


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_toy_writes_world(toy_dir):
    assert {p.name for p in toy_dir.iterdir()} == {"reference.tsv", "beliefs.json", "config.ini"}


def test_stage_by_stage_then_report(toy_dir, tmp_path):
    run = tmp_path / "run"
    for cmd in (["ingest"], ["calibrate"], ["sample-targets"], ["extract", "--phase", "pre"], ["simulate"],
                ["extract", "--phase", "post"], ["judge"], ["evaluate"]):
        result = invoke(*cmd, *run_args(toy_dir, run))
        assert result.exit_code == 0, result.output
        assert result.output.endswith(": done\n")
    result = invoke("report", *run_args(toy_dir, run))
    assert result.exit_code == 0
    lines = result.output.splitlines()
    assert lines[0] == "report: done"
    assert lines[1].startswith("UES(inst)=") and ", UES(ours)=" in lines[1] and ", gap=" in lines[1]


def test_rerun_is_up_to_date(toy_dir, tmp_path):
    run = tmp_path / "run"
    assert invoke("run", *run_args(toy_dir, run)).exit_code == 0
    result = invoke("run", *run_args(toy_dir, run))
    assert result.exit_code == 0
    assert "ingest: up-to-date" in result.output and "report: up-to-date" in result.output


def test_dependency_error_exit_code(toy_dir, tmp_path):
    result = invoke("evaluate", *run_args(toy_dir, tmp_path / "run"))
    assert result.exit_code == 3
    assert "extract-pre" in result.output


def test_staleness_exit_code_and_force(toy_dir, tmp_path):
    run = tmp_path / "run"
    assert invoke("run", *run_args(toy_dir, run)).exit_code == 0
    config = toy_dir / "config.ini"
    config.write_text(config.read_text().replace("gamma = 2", "gamma = 4"))
    assert invoke("report", *run_args(toy_dir, run)).exit_code == 3
    assert invoke("evaluate", *run_args(toy_dir, run, "--force")).exit_code == 0
    assert invoke("report", *run_args(toy_dir, run, "--force")).exit_code == 0


def test_lock_exit_code(toy_dir, tmp_path):
    run = tmp_path / "run"
    run.mkdir()
    with filelock.FileLock(str(run / ".lock")):
        result = invoke("ingest", *run_args(toy_dir, run))
    assert result.exit_code == 3
    assert "in use" in result.output


def test_empty_forget_set_is_validation_error(toy_dir, tmp_path):
    config = toy_dir / "config.ini"
    config.write_text(config.read_text().replace("n = 6", "n = 0"))
    result = invoke("ingest", *run_args(toy_dir, tmp_path / "run"))
    assert result.exit_code == 2
    assert "at least one target" in result.output


def test_missing_config_is_validation_error(tmp_path):
    assert invoke("ingest", "--config", str(tmp_path / "nope.ini"), "--run-dir", str(tmp_path / "run")).exit_code == 2


def test_too_few_targets_is_validation_error(toy_dir, tmp_path):
    config = toy_dir / "config.ini"
    config.write_text(config.read_text().replace("n = 6", "n = 60"))
    run = tmp_path / "run"
    invoke("ingest", *run_args(toy_dir, run))
    invoke("calibrate", *run_args(toy_dir, run))
    result = invoke("sample-targets", *run_args(toy_dir, run))
    assert result.exit_code == 2
    assert "6 qualify" in result.output


def test_unreachable_endpoint_is_transport_error(toy_dir, tmp_path):
    config = toy_dir / "config.ini"
    text = config.read_text().replace("beliefs = beliefs.json\n", "")
    text += f"\n[probe]\nendpoint = http://127.0.0.1:{free_port()}/probe\nretries = 0\n"
    config.write_text(text)
    run = tmp_path / "run"
    invoke("ingest", *run_args(toy_dir, run))
    invoke("calibrate", *run_args(toy_dir, run))
    result = invoke("sample-targets", *run_args(toy_dir, run))
    assert result.exit_code == 4
    assert "failed after 1 attempts" in result.output


def test_seed_flag_changes_recorded_config(toy_dir, tmp_path):
    run = tmp_path / "run"
    assert invoke("ingest", *run_args(toy_dir, run, "--seed", "5")).exit_code == 0
    entry = json.loads((run / "manifest.jsonl").read_text().splitlines()[0])
    assert entry["config"]["seed"] == 5


def test_validate_template_command(toy_dir, tmp_path):
    labels = tmp_path / "labels.tsv"
    ref = (toy_dir / "reference.tsv").read_text().splitlines()
    rows = [line + "\tpositive" for line in ref[:10]] + ["Nobody\tlivesIn\tAvalon\tnegative"]
    labels.write_text("\n".join(rows) + "\n")
    out = tmp_path / "validation.json"
    result = invoke("validate-template", "--config", str(toy_dir / "config.ini"), "--labels", str(labels), "--out", str(out))
    assert result.exit_code == 0, result.output
    assert "selected:" in result.output
    doc = json.loads(out.read_text())
    assert all(r["accuracy"] == 1.0 for r in doc["results"])


def test_correlated_toy_config(tmp_path):
    out = tmp_path / "toy"
    assert invoke("toy", str(out), "--correlated").exit_code == 0
    assert "correlated_damage strength=1 radius=1 fraction=0.8" in (out / "config.ini").read_text()
