import csv
import json

import numpy as np
import pytest

from attitude_hydro.cli import main
from attitude_hydro.config import parse_config, parse_config_text
from attitude_hydro.errors import ConfigError
from attitude_hydro.io import read_csv, read_snapshot, write_csv, write_json_atomic, write_snapshot

SMALL = """
[so3]
n_alpha = 9
n_beta = 6
n_gamma = 9
[space]
cells = 16
[theta]
n = 512
"""


def test_defaults():
    cfg = parse_config_text("", "simulate-sohb")
    assert cfg.space.cells == 64 and cfg.sohb.form == "stereo"
    assert cfg.limit.eps_list == (0.2, 0.1, 0.05, 0.025)


def test_values_are_typed():
    cfg = parse_config_text("[limit]\neps_list = 0.4, 0.2 0.1\nallow_negative_margin = yes\n[space]\ndirection = 0 0 1\n")
    assert cfg.limit.eps_list == (0.4, 0.2, 0.1)
    assert cfg.limit.allow_negative_margin is True
    assert cfg.space.direction == (0.0, 0.0, 1.0)


@pytest.mark.parametrize("text, line, fragment", [
    ("[physics]\nd = 1\nbogus = 3\n", 3, "unknown key"),
    ("\n[nowhere]\nx = 1\n", 2, "unknown section"),
    ("[space]\ncells = 8\n", 2, "16 cells"),
    ("[space]\ncells = many\n", 2, "invalid literal"),
    ("[physics]\n\nnu0 = -1\n", 3, "positive"),
    ("[sohb]\nform = polar\n", 2, "not one of"),
    ("[so3]\nn_alpha = 10\n", 2, "odd"),
    ("[limit]\neps_list = 0.1, 0.2, 0.05\n", 2, "decreasing"),
    ("[space]\ndim = 2\n", 2, "1 or 3"),
])
def test_config_errors_name_the_line(text, line, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config_text(text, "coefficients", "run.ini")
    msg = str(info.value)
    assert f"run.ini:{line}:" in msg and fragment in msg


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "absent.ini")


def test_csv_roundtrip_is_exact(tmp_path):
    rows = [{"a": 0.1 + 0.2, "b": 1e-300, "c": "x"}, {"a": np.float64(np.pi), "b": -0.0, "c": "y"}]
    write_csv(tmp_path / "t.csv", rows)
    back = read_csv(tmp_path / "t.csv")
    assert float(back[0]["a"]) == 0.1 + 0.2
    assert float(back[1]["a"]) == np.pi
    text = (tmp_path / "t.csv").read_bytes()
    write_csv(tmp_path / "u.csv", rows)
    assert (tmp_path / "u.csv").read_bytes() == text


def test_snapshot_roundtrip(tmp_path, rng):
    arr = rng.standard_normal((16, 10))
    write_snapshot(str(tmp_path / "s"), arr, ["rho"] + [f"L{i}" for i in range(9)], t=0.5)
    back, meta = read_snapshot(str(tmp_path / "s"))
    np.testing.assert_array_equal(back, arr)
    assert meta["t"] == 0.5 and meta["variables"][0] == "rho"


def test_json_handles_numpy_and_nan(tmp_path):
    write_json_atomic(tmp_path / "m.json", {"x": np.float64(1.5), "n": np.int64(3), "v": np.arange(2), "z": float("nan")})
    data = json.loads((tmp_path / "m.json").read_text())
    assert data["x"] == 1.5 and data["n"] == 3 and data["v"] == [0, 1] and data["z"] == "nan"


def _run(tmp_path, mode, text, *extra):
    ini = tmp_path / "run.ini"
    ini.write_text(text)
    out = tmp_path / "out"
    code = main([mode, "--config", str(ini), "--out", str(out), *extra])
    return code, out, json.loads((out / "manifest.json").read_text())


def test_cli_config_error_exit_code(tmp_path):
    code, out, man = _run(tmp_path, "coefficients", "[physics]\nfoo = 1\n")
    assert code == 2 and man["exit_status"] == 2
    assert "unknown key" in man["failures"][0]


def test_cli_coefficients(tmp_path, capsys):
    code, out, man = _run(tmp_path, "coefficients", SMALL + "[coefficients]\nnu0_list = 0.5 1\n")
    assert code == 0
    rows = list(csv.DictReader(open(out / "coefficients.csv")))
    assert [float(r["kappa"]) for r in rows] == [0.5, 1.0]
    assert capsys.readouterr().out.startswith("kappa,Z,c1")
    assert "coefficients" in man["phases"]


def test_cli_sohb(tmp_path):
    code, out, man = _run(tmp_path, "simulate-sohb", SMALL + "[time]\nT = 0.05\noutput_every = 2\n")
    assert code == 0
    assert man["diagnostics"]["relative_mass_drift"] < 1e-12
    arr, meta = read_snapshot(str(out / "sohb_snapshot_0000"))
    assert arr.shape == (16, 10) and meta["t"] == 0.0


def test_cli_sokb(tmp_path):
    code, out, man = _run(tmp_path, "simulate-sokb", SMALL + "[time]\nT = 0.125\noutput_every = 1\n[sokb]\neps = 0.5\ninitial = equilibrium\n")
    assert code == 0
    rows = read_csv(out / "sokb.csv")
    assert len(rows) == 3
    assert "Lam_distance" in read_csv(out / "moments.csv")[0]


def test_cli_upwind_dt_rejected(tmp_path):
    code, _, man = _run(tmp_path, "simulate-sokb", SMALL + "[time]\ndt = 0.1\nT = 0.2\n[sokb]\ntransport = upwind\n")
    assert code == 2


def test_cli_limit_study_refuses_negative_margin(tmp_path, capsys):
    code, _, man = _run(tmp_path, "limit-study", SMALL)
    assert code == 2
    assert "allow_negative_margin" in capsys.readouterr().err


@pytest.mark.parametrize("name, mode", [("coefficients", "coefficients"), ("sohb", "simulate-sohb"),
                                        ("sokb", "simulate-sokb"), ("limit", "limit-study"), ("verify", "verify")])
def test_shipped_configs_parse(name, mode):
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "configs" / f"{name}.ini"
    assert parse_config(path, mode).mode == mode
