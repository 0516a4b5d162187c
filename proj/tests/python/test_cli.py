import json
import os
import subprocess
from pathlib import Path

import pytest

CLI = os.environ.get("BATCHCAUSAL_CLI")
ROOT = Path(__file__).resolve().parents[2]

pytestmark = pytest.mark.skipif(not CLI, reason="BATCHCAUSAL_CLI not set")

TINY = {
    "dataset": {"generator": "blobs", "n": 120, "dim": 4, "classes": 2, "separation": 3.0, "seed": 0},
    "model": {"kind": "mlp1", "hidden": 8},
    "batch_sizes": [16, 64],
    "seeds": 2,
    "train": {"epochs": 3, "probe_size": 32},
    "causal": {"treat": 16, "control": 64},
}


def run(*args, env=None):
    return subprocess.run([CLI, *map(str, args)], capture_output=True, text=True, env=env)


def test_validate_shipped_config():
    r = run("validate", ROOT / "configs" / "blobs_desk.json")
    assert r.returncode == 0, r.stderr
    assert "40 planned runs" in r.stdout


def test_unknown_key_is_a_validation_error(tmp_path):
    cfg = dict(TINY, batch_szies=[16])
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(cfg))
    r = run("validate", path)
    assert r.returncode == 1
    assert "batch_szies" in r.stderr


def test_missing_file_and_bad_flags():
    assert run("validate", "/nonexistent/config.json").returncode in (1, 2)
    assert run("analyze").returncode == 1


def test_sweep_analyze_report_with_env_output(tmp_path):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    env = dict(os.environ, BATCHCAUSAL_OUT=str(tmp_path / "out"))
    r = run("sweep", cfg, "--quiet", env=env)
    assert r.returncode == 0, r.stderr
    records = tmp_path / "out" / "records.jsonl"
    lines = records.read_text().splitlines()
    assert len(lines) == 4
    assert all(json.loads(line)["schema_version"] == 1 for line in lines)

    again = run("sweep", cfg, "--quiet", env=env)
    assert "new runs: 0" in again.stdout

    assert run("validate", records).returncode == 0
    a = run("analyze", records, "--mode", "algorithm1", "--bundle", tmp_path / "a.json")
    assert a.returncode == 0, a.stderr
    assert "Significance" in a.stdout
    assert "settings" in json.loads((tmp_path / "a.json").read_text())

    rep = run("report", records, env=env)
    assert rep.returncode == 0, rep.stderr
    out = tmp_path / "out" / "report"
    for name in ["report.txt", "accuracy.csv", "ate.csv", "significance.csv", "analysis.json"]:
        assert (out / name).exists()
    assert (out / "accuracy.csv").read_text().startswith("batch_size,ablation,runs")


def test_malformed_record_line_is_a_validation_error(tmp_path):
    bad = tmp_path / "records.jsonl"
    bad.write_text('{"schema_version": 1}\n')
    r = run("validate", bad)
    assert r.returncode == 1
