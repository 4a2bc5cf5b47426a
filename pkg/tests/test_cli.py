import json
import subprocess
import sys

import pytest

from whittaker_ew.cli import main
from whittaker_ew.harness import CSV_HEADER


def write(tmp_path, raw, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return str(path)


def test_validate_passes(capsys):
    assert main(["validate"]) == 0
    assert "PASS  Q negative definite" in capsys.readouterr().err


def test_malformed_config(tmp_path, capsys):
    assert main(["validate", "--config", write(tmp_path, {"drift": {"D": 1, "C": 2}})]) == 2
    assert "config error" in capsys.readouterr().err
    assert main(["sweep-delta", "--config", write(tmp_path, {"extra": {}})]) == 2


def test_replica_floor(tmp_path):
    assert main(["covariance", "--config", write(tmp_path, {"mc": {"replicas": 10}})]) == 2


def test_bad_flags(tmp_path):
    assert main(["validate", "--threads", "0"]) == 2
    assert main(["validate", "--seed", "-1"]) == 2


def test_empty_sweep(tmp_path, capsys):
    assert main(["sweep-delta", "--config", write(tmp_path, {"rescale": {"delta_list": []}})]) == 0
    assert capsys.readouterr().out == ",".join(CSV_HEADER) + "\n"


def test_sweep_delta_file_and_threads(tmp_path):
    cfg = write(tmp_path, {"rescale": {"delta_list": [0.25]}, "mc": {"replicas": 1000, "seed": 1}})
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["sweep-delta", "--config", cfg, "--out", str(a), "--threads", "1"]) == 0
    assert main(["sweep-delta", "--config", cfg, "--out", str(b), "--threads", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes().startswith(b"delta,m,s,t,estimate")
    c = tmp_path / "c.csv"
    assert main(["sweep-delta", "--config", cfg, "--out", str(c), "--seed", "2"]) == 0
    assert c.read_bytes() != a.read_bytes()


def test_covariance(tmp_path, capsys):
    cfg = write(tmp_path, {"rescale": {"delta_list": [0.25]}, "mc": {"replicas": 1000}})
    assert main(["covariance", "--config", cfg]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2 and lines[1].startswith("0.25,64,")


def test_covariance_wrap_failure(tmp_path):
    cfg = write(tmp_path, {"torus": {"m": 16, "m2": 8}, "rescale": {"delta_list": [0.25]},
                           "mc": {"replicas": 1000}})
    assert main(["covariance", "--config", cfg]) == 1


def test_sweep_mean(tmp_path, capsys):
    cfg = write(tmp_path, {"rescale": {"delta_list": [0.25], "s": 0.5, "t": 0.5},
                           "ic": {"psi": [[1.0, [0.0, 0.0], 1.0]]}})
    assert main(["sweep-mean", "--config", cfg]) == 0
    row = capsys.readouterr().out.splitlines()[1].split(",")
    assert row[5] == "0" and float(row[8]) < 0.1


def test_simulate(tmp_path, capsys):
    cfg = write(tmp_path, {"torus": {"m": 8, "m2": 4}, "rescale": {"delta_list": [0.5]},
                           "ic": {"psi": [[1.0, [0.0, 0.0], 1.0]]}})
    assert main(["simulate", "--config", cfg, "--seed", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "t,x1,x2,value" and len(lines) == 1 + 64


def test_ibp_check(capsys):
    assert main(["ibp-check"]) == 0
    assert "Jordan bounds" in capsys.readouterr().err


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "whittaker_ew", "validate"], capture_output=True,
                         text=True)
    assert out.returncode == 0
