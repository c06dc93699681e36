import csv
import json
import subprocess
import sys

import pytest

from conftest import AFFINE, CONFIGS
from nlinclusion.cli import FIELD_COLUMNS, main


def write(tmp_path, obj, name="run.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
    return str(p)


def affine_config(tmp_path, **extra):
    return write(tmp_path, {**AFFINE, "out": str(tmp_path / "out"), **extra})


def test_malformed_json_exits_2(tmp_path, capsys):
    assert main(["validate", "--config", write(tmp_path, '{"order": 8,')]) == 2
    assert "line 1" in capsys.readouterr().err


def test_unknown_key_exits_2(tmp_path, capsys):
    assert main(["validate", "--config", affine_config(tmp_path, colour="blue")]) == 2
    assert "colour" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path):
    assert main(["validate", "--config", str(tmp_path / "absent.json")]) == 2


def test_bad_arguments_exit_2(tmp_path):
    cfg = affine_config(tmp_path)
    assert main(["frobnicate", "--config", cfg]) == 2
    assert main(["validate", "--config", cfg, "--epsilon", "0.1"]) == 2
    assert main(["validate", "--config", cfg, "--seed", "-1"]) == 2
    assert main(["probe", "--config", cfg, "--threads", "0"]) == 2
    assert main(["solve", "--config", cfg]) == 2


def test_default_validate_passes(tmp_path, capsys):
    assert main(["validate", "--config", affine_config(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out
    doc = json.loads((tmp_path / "out" / "validate.json").read_text())
    assert {"command", "timestamp", "version", "seed"} <= set(doc["header"])


def test_coarse_validate_fails(tmp_path, capsys):
    assert main(["validate", "--config", affine_config(tmp_path, order=4, order_inner=4)]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_solve_outside_window_exits_2(tmp_path):
    cfg = affine_config(tmp_path)
    assert main(["solve", "--config", cfg, "--epsilon", "1.5"]) == 2
    assert main(["solve", "--config", cfg, "--epsilon", "0"]) == 2


def test_grid_outside_window_exits_2(tmp_path):
    assert main(["continue", "--config", affine_config(tmp_path, epsilon_grid=[0.5, 1.5])]) == 2


def test_affine_solve(tmp_path):
    assert main(["solve", "--config", affine_config(tmp_path), "--epsilon", "0.1"]) == 0
    out = tmp_path / "out"
    report = json.loads((out / "report.json").read_text())["payload"]
    assert report["report"]["converged"] and report["failures"] == []
    with open(out / "fields.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == FIELD_COLUMNS and len(rows) > 10


def test_continue_writes_family(tmp_path):
    assert main(["continue", "--config", affine_config(tmp_path)]) == 0
    out = tmp_path / "out"
    doc = json.loads((out / "family.json").read_text())
    assert len(doc["payload"]["entries"]) == 3
    assert (out / "family.csv").read_text().startswith("schema_version,epsilon")


def test_small_probe_run(tmp_path):
    probe = {"deltas": [0.1, 1.0], "samples": 2, "contraction_samples": 2, "corollary_samples": 1}
    assert main(["probe", "--config", affine_config(tmp_path, probe=probe), "--threads", "2"]) == 0
    out = tmp_path / "out"
    doc = json.loads((out / "probe.json").read_text())
    assert doc["payload"]["failures"] == []
    assert (out / "probe.csv").exists() and (out / "summary.csv").exists()


def test_module_entry_point(tmp_path):
    cfg = CONFIGS / "affine.json"
    proc = subprocess.run(
        [sys.executable, "-m", "nlinclusion", "solve", "--config", str(cfg), "--epsilon", "0.1", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "report.json").exists()
