from pathlib import Path

import numpy as np
import pytest

from chcontrol.config import parse_config, parse_text
from chcontrol.exceptions import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
MINIMAL = "[time]\ndt = 0.05\nT = 0.2\n"


def _err(text):
    with pytest.raises(ConfigError) as info:
        parse_text(text)
    return info.value


def test_minimal_config_fills_defaults():
    cfg = parse_text(MINIMAL)
    assert cfg["grid"] == {"mode": "1d", "n": 17}
    assert cfg["time"]["tau"] == 0.0
    assert cfg["tau_study"]["tau_list"] == [0.1, 0.01, 0.001, 0.0]
    assert cfg.lines["time.T"] == 3 and "grid.n" not in cfg.lines


def test_shipped_configs_parse():
    for name in ("standard_1d", "stationary_2d", "logarithmic_1d"):
        cfg = parse_config(CONFIGS / f"{name}.cfg")
        assert cfg.problem().grid.bulk_count > 0


def test_mean_outside_log_domain():
    text = "[potential]\nkind = logarithmic\n[time]\ndt = 0.05\nT = 0.2\n[initial]\nmean = 1.5\n"
    err = _err(text)
    assert err.key == "initial.mean" and err.line == 7
    assert str(err).startswith("line 7: ")


def test_inverted_box():
    err = _err(MINIMAL + "[box]\nu_min = 2\nu_max = 1\n")
    assert err.key == "box.u_min" and err.line == 5
    assert "infeasible" in str(err)


def test_missing_required_key():
    err = _err("[time]\ndt = 0.05\n")
    assert err.key == "time.T" and err.line is None


@pytest.mark.parametrize(
    "extra, key, line",
    [
        ("[grid]\nn = seventeen\n", "grid.n", 5),
        ("[grid]\nsize = 3\n", "grid.size", 5),
        ("[mesh]\n", "mesh", 4),
        ("[time]\ndt = 0.1\n", "time.dt", 5),
        ("[time]\ntau = -1\n", "time.tau", 5),
        ("[time]\ndt = 0.03\n", None, 5),
    ],
)
def test_line_numbered_errors(extra, key, line):
    err = _err(MINIMAL + extra)
    assert err.line == line
    if key is not None:
        assert err.key == key


def test_dt_must_divide_T():
    err = _err("[time]\ndt = 0.03\nT = 0.2\n")
    assert err.key == "time.dt" and err.line == 2


def test_malformed_lines():
    assert _err("dt = 1\n").line == 1
    assert _err("[time\n").line == 1
    assert _err("[time]\njust words\n").line == 2


def test_comments_and_blank_lines():
    cfg = parse_text("# header\n\n[time]\n; note\ndt = 0.05\nT = 0.2\n")
    assert cfg.lines["time.dt"] == 5


def test_initial_profiles():
    for profile in ("constant", "cosine", "random"):
        cfg = parse_text(MINIMAL + f"[initial]\nprofile = {profile}\nmean = 0.1\n")
        y0 = cfg.initial_state(cfg.grid())
        assert y0.shape == (17,)
    cfg = parse_text(MINIMAL + "[initial]\nprofile = constant\nmean = 0.1\n")
    np.testing.assert_array_equal(cfg.initial_state(cfg.grid()), 0.1)


def test_with_seed_does_not_mutate():
    cfg = parse_text(MINIMAL)
    other = cfg.with_seed(7)
    assert other["output"]["seed"] == 7 and cfg["output"]["seed"] == 0


def test_target_and_control_files(tmp_path):
    from chcontrol import io

    base = parse_text(MINIMAL + "[grid]\nn = 9\n")
    problem = base.problem()
    np.savez(tmp_path / "target.npz", z_q=problem.cost.z_q, z_sigma=problem.cost.z_sigma)
    u = base.reference_control(problem.grid)
    io.write_control(tmp_path / "control.csv", u, problem.config.times)
    text = MINIMAL + "[grid]\nn = 9\n[cost]\ntarget = file\ntarget_file = target.npz\ncontrol_file = control.csv\n"
    cfg = parse_text(text, base_dir=tmp_path)
    np.testing.assert_array_equal(cfg.problem().cost.z_q, problem.cost.z_q)
    np.testing.assert_array_equal(cfg.reference_control(problem.grid), u)
    with pytest.raises(ConfigError) as info:
        parse_text(text.replace("target.npz", "missing.npz"), base_dir=tmp_path)
    assert info.value.key == "cost.target_file"
