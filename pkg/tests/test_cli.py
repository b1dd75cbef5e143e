from __future__ import annotations

import csv
import json
import math

import pytest

from pmqkd import cli
from pmqkd.scenario import ScenarioError, load_preset


def run_cli(*args) -> int:
    return cli.main([str(a) for a in args])


def test_run_is_byte_identical_on_rerun(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli("run", "lab_50km", "--duration", 120, "--out", a, "--plot") == 0
    assert run_cli("run", "lab_50km", "--duration", 120, "--out", b, "--plot") == 0
    for name in ("summary.json", "qber_series.csv", "qber.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_seed_override_changes_output(tmp_path):
    run_cli("run", "lab_50km", "--duration", 60, "--out", tmp_path / "a")
    run_cli("run", "lab_50km", "--duration", 60, "--out", tmp_path / "b", "--seed", 7)
    a = json.loads((tmp_path / "a" / "summary.json").read_text())
    b = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert b["scenario"]["seed"] == 7
    assert a["session"] != b["session"]


def test_series_and_summary_format(tmp_path):
    run_cli("run", "lab_50km", "--duration", 600, "--out", tmp_path)
    rows = list(csv.reader((tmp_path / "qber_series.csv").open()))
    assert rows[0] == ["t_seconds", "qber", "window_sifted_bits"]
    assert len(rows) > 1
    times = [float(r[0]) for r in rows[1:]]
    assert times == sorted(times)
    assert all(0.0 <= float(r[1]) <= 1.0 and int(r[2]) >= 2000 for r in rows[1:])
    doc = json.loads((tmp_path / "summary.json").read_text())
    assert doc["scenario"] == load_preset("lab_50km").to_dict()
    assert doc["version"] and doc["calibrations"]
    assert set(doc["fitted_parameters"]) == {"detector.efficiency", "detector.dark_prob", "drift_rate"}


def test_zero_duration_artifact(tmp_path):
    assert run_cli("run", "urban_30km", "--duration", 0, "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "summary.json").read_text())
    assert doc["session"]["sent"] == 0
    assert doc["session"]["sifted_rate_bps"] == 0.0
    assert (tmp_path / "qber_series.csv").read_text().strip() == "t_seconds,qber,window_sifted_bits"


def test_run_from_yaml_file(tmp_path):
    cfg = tmp_path / "s.yaml"
    cfg.write_text("name: tiny\nseed: 4\nduration_s: 30\n")
    assert run_cli("run", cfg, "--out", tmp_path / "out") == 0
    doc = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert doc["scenario"]["name"] == "tiny"


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("seed: 1\nchannel_loss_db: -1\n")
    assert run_cli("run", cfg, "--out", tmp_path) == 2
    assert "channel_loss_db" in capsys.readouterr().err


def test_unwritable_output(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run_cli("run", "lab_50km", "--duration", 0, "--out", blocker / "sub") == 1
    assert str(blocker / "sub") in capsys.readouterr().err


def test_unknown_sweep_parameter(tmp_path, capsys):
    assert run_cli("sweep", "lab_50km", "--param", "warp_factor", "--values", 1, "--out", tmp_path) == 2
    assert "warp_factor" in capsys.readouterr().err


def test_empty_sweep_values():
    with pytest.raises(ScenarioError, match="at least one"):
        cli.sweep(load_preset("lab_50km"), "mu_key", [], 10.0)
    assert cli.main(["sweep", "lab_50km", "--param", "mu_key", "--values"]) == 2


def test_presets_list(capsys):
    assert run_cli("presets", "list") == 0
    assert capsys.readouterr().out.split() == ["lab_50km", "urban_30km"]


def closed_form_sift_probability(mu, loss_db, eta, dark):
    m = mu * 10 ** (-loss_db / 10)
    click = 1 - (1 - dark) * math.exp(-eta * m)
    idle = 1 - dark
    return 0.5 * (click * idle + dark * (1 - click))


def test_mu_sweep_rate_ratio(tmp_path):
    sc = load_preset("lab_50km")
    assert run_cli("sweep", "lab_50km", "--param", "mu_key", "--values", 0.02, 0.1, "--duration", 600, "--out", tmp_path) == 0
    rows = list(csv.DictReader((tmp_path / "sweep.csv").open()))
    assert [float(r["value"]) for r in rows] == [0.02, 0.1]
    # rates during key sharing only, so recalibration timing cancels
    data_rate = [float(r["sifted_rate_bps"]) / float(r["duty_cycle_data"]) for r in rows]
    loss = sc.channel_loss_db + sc.bob_loss_db
    p = [closed_form_sift_probability(mu, loss, sc.detector.efficiency, sc.detector.dark_prob) for mu in (0.02, 0.1)]
    assert data_rate[1] / data_rate[0] == pytest.approx(p[1] / p[0], rel=0.05)
    assert data_rate[1] / data_rate[0] == pytest.approx(0.1 / 0.02, rel=0.05)
    assert data_rate[1] == pytest.approx(p[1] * sc.effective_clock_hz, rel=0.05)


def test_compensation_sweep_shows_gap():
    rows = cli.sweep(load_preset("lab_50km"), "pulse.pmd_compensation", [True, False], 1200.0)
    on, off = rows
    assert on["intrinsic_error"] == 0.0 and off["intrinsic_error"] > 0.05
    # calibration cannot get below the uncompensated error floor
    assert on["calibrated_qber"] <= 0.01
    assert off["calibrated_qber"] >= off["intrinsic_error"] - 0.01
    assert on["qber"] < 0.05 < off["qber"]
    assert off["duty_cycle_data"] < on["duty_cycle_data"]
