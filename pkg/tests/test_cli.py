import csv
import json
import subprocess
import sys

import pytest

from pfalign.cli import main


def test_verify_theory_lambda_01(tmp_path, capsys):
    out = tmp_path / "r"
    assert main(["verify-theory", "--lambda", "0.1", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "prop3_sweep.csv")))
    assert len(rows) == 1
    assert float(rows[0]["predicted_deg"]) == pytest.approx(17.55, abs=0.005)
    assert abs(float(rows[0]["simulated_deg"]) - float(rows[0]["predicted_deg"])) < 1.0
    doc = json.loads((out / "prop2_check.json").read_text())
    assert doc["passed"] is True


def test_brain_sim(tmp_path):
    assert main(["brain-sim", "--pairs", "1000000", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "brain_sim.json").read_text())
    assert doc["correlation"] == pytest.approx(0.2, abs=0.01)
    assert doc["angle_deg"] == pytest.approx(78.0, abs=0.5)


def test_mp_spectrum(tmp_path):
    assert main(["mp-spectrum", "--lambda", "0.25", "--n", "128", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "spectrum.json").read_text())
    assert doc["n_bar"] == 512
    assert (tmp_path / "eigenvalues.csv").read_text().startswith("eigenvalue\n")


def test_train_missing_config(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["train", "--config", str(tmp_path / "missing.toml"), "--out", str(out)]) != 0
    assert "not found" in capsys.readouterr().err
    assert not out.exists()


def test_train_config(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(
        'name = "cli"\nepochs = 1\n[algorithm]\ntag = "fa"\n'
        '[dataset]\nname = "synthetic"\nn_train = 40\nn_test = 20\ndims = 4\nclasses = 2\n'
        '[model]\nlayers = [{ type = "dense", units = 5 }, { type = "dense", units = 2 }]\n'
    )
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "7"]) == 0
    assert (tmp_path / "o" / "cli" / "metrics_seed7.csv").exists()


def test_usage_errors_exit_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["brain-sim", "--bogus"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_contract_error_exit_1(tmp_path, capsys):
    assert main(["mp-spectrum", "--lambda", "2.0", "--out", str(tmp_path)]) == 1
    assert "lambda" in capsys.readouterr().err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "pfalign", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "verify-theory" in res.stdout
