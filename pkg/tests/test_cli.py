import json
from pathlib import Path

import pytest

from chcontrol import io
from chcontrol.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """\
[grid]
mode = 1d
n = 9

[time]
dt = 0.02
T = 0.2

[cost]
b_0 = 1e-3

[tau_study]
tau_list = 0.01, 0

[output]
snapshot_stride = 5
"""


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return path


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


@pytest.mark.parametrize("command", ["simulate", "optimize", "adjoint-check", "tau-study"])
def test_subcommands_succeed(command, small_cfg, tmp_path):
    out = tmp_path / command
    assert main([command, str(small_cfg), "--out", str(out)]) == 0
    man = _manifest(out)
    assert man["command"] == command and man["status"]["ok"]
    for name, digest in man["outputs"].items():
        assert io.git_blob_hash((out / name).read_bytes()) == digest
    assert man["config_sha256"] == io.config_hash(SMALL)


def test_project_check(small_cfg, tmp_path):
    out = tmp_path / "pc"
    assert main(["project-check", str(small_cfg), "--out", str(out)]) == 0
    report = json.loads((out / "project_check.json").read_text())
    assert max(report["max_abs_difference"].values()) <= 1e-8


def test_reruns_are_byte_identical(small_cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["optimize", str(small_cfg), "--out", str(out), "--seed", "3"]) == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes()
    assert _manifest(a)["seed"] == 3


def test_bad_config_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(SMALL + "[box]\nu_min = 2\nu_max = 1\n[output]\n")
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "o")]) == 2
    payload = json.loads(capsys.readouterr().err)
    assert payload["error"] == "ConfigError" and payload["exit_code"] == 2


def test_invalid_value_reports_key_and_line(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[potential]\nkind = logarithmic\n[time]\ndt = 0.05\nT = 0.2\n[initial]\nmean = 1.5\n")
    assert main(["simulate", str(cfg)]) == 2
    payload = json.loads(capsys.readouterr().err)
    assert payload["key"] == "initial.mean" and payload["line"] == 7


def test_missing_config_and_usage(tmp_path):
    assert main(["simulate", str(tmp_path / "nope.cfg")]) == 2
    assert main(["fly", "x.cfg"]) == 2


def test_stationary_2d_conserves_mass(tmp_path):
    out = tmp_path / "s2"
    assert main(["simulate", str(CONFIGS / "stationary_2d.cfg"), "--out", str(out)]) == 0
    checks = _manifest(out)["status"]["checks"]
    assert checks["mass_drift"]["value"] <= 1e-10
    assert checks["energy_increase"]["pass"]
