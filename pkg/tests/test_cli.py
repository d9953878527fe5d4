import json

import numpy as np
import pytest

from blowup_lab.cli import main, read_config
from blowup_lab.harness import MOD_HEADER, SpecError, write_csv


def test_ground_state_writes_outputs(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("BLOWUP_LAB_OUT", str(tmp_path))
    assert main(["ground-state", "--profile-h", "0.02"]) == 0
    d = tmp_path / "minimal_blowup" / "ground-state"
    summary = json.loads((d / "ground_state.json").read_text())
    assert summary["mass2"] == pytest.approx(11.7009, abs=1e-3)
    manifest = json.loads((d / "manifest.json").read_text())
    assert manifest["spec"]["profile_h"] == 0.02
    assert "mass2" in capsys.readouterr().out


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# settings\nname = cfgtest\nprofile_h = 0.05\nprofile_rmax: 20\n")
    assert read_config(cfg) == {"name": "cfgtest", "profile_h": "0.05", "profile_rmax": "20"}
    out = tmp_path / "o"
    assert main(["ground-state", "--config", str(cfg), "--profile-h", "0.02", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["spec"]["name"] == "cfgtest"
    assert manifest["spec"]["profile_h"] == 0.02


def test_bad_config_line(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("just words\n")
    with pytest.raises(SpecError):
        read_config(cfg)
    assert main(["ground-state", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_linops_check(tmp_path):
    assert main(["linops", "--check", "--profile-h", "0.02", "--out", str(tmp_path)]) == 0
    table = json.loads((tmp_path / "linops.json").read_text())
    assert max(table["relative"].values()) < 1e-5


@pytest.mark.parametrize("argv", [["ground-state", "--sigma", "1.5"],
                                  ["ground-state", "--sign", "3"],
                                  ["ground-state", "--no-such-flag", "1"],
                                  ["frobnicate"],
                                  ["fit-rate", "--mod", "/nonexistent/mod.csv"]])
def test_invalid_input_exit_code(argv, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path)] if argv[0] != "frobnicate" else argv) == 2


def test_numerical_failure_exit_code(tmp_path, capsys):
    code = main(["ground-state", "--profile-h", "0.05", "--profile-rmax", "5",
                 "--out", str(tmp_path)])
    assert code == 3
    assert "stage=ground_state" in capsys.readouterr().err


def test_fit_rate_on_synthetic_table(tmp_path):
    # a pure power law with the predicted exponents and a fitted blow-up time
    t = -0.04 - np.geomspace(5e-3, 1e-5, 150)
    lam = 0.9 * (-0.04 - t) ** (1 / 1.3)
    b = 2.0 * (-0.04 - t) ** (0.7 / 1.3)
    rows = []
    for i in range(t.size):
        row = dict.fromkeys(MOD_HEADER, 0.0)
        row.update(t=t[i], s=float(i + 1), b=b[i], valid=1.0, mod=1.0 / (i + 1) ** 2)
        row["lambda"] = lam[i]
        rows.append([row[k] for k in MOD_HEADER])
    write_csv(tmp_path / "mod.csv", MOD_HEADER, rows)
    code = main(["fit-rate", "--mod", str(tmp_path / "mod.csv"), "--profile-h", "0.02",
                 "--h", "1e-5", "--r-max", "1", "--lambda1", str(2 * lam[0]),
                 "--out", str(tmp_path / "fit")])
    assert code == 0
    fit = json.loads((tmp_path / "fit" / "fit.json").read_text())
    assert fit["fit_lambda"]["exponent"] == pytest.approx(1 / 1.3, abs=1e-6)
    assert fit["fit_b"]["exponent"] == pytest.approx(0.7 / 1.3, abs=1e-6)
    assert fit["mod"]["slope"] == pytest.approx(-2.0, abs=1e-6)
