from __future__ import annotations

import numpy as np
import pytest
import yaml

from pmqkd.chain import Topology
from pmqkd.optics import AttenuatorMode
from pmqkd.scenario import (
    Scenario,
    ScenarioError,
    build_chain,
    field_names,
    load_preset,
    load_scenario,
    parse_scenario,
    preset_names,
    resolve,
)


def test_presets_listed():
    assert preset_names() == ["lab_50km", "urban_30km"]


def test_lab_preset_values():
    sc = load_preset("lab_50km")
    assert sc.mu_key == 0.1
    assert sc.channel_loss_db == 10.0
    assert sc.clock_hz == 1e7
    assert sc.effective_clock_hz == 5e6
    assert sc.bob_loss_db == 2.0


def test_urban_preset_values():
    sc = load_preset("urban_30km")
    assert sc.mu_key == 0.02
    assert sc.channel_loss_db == 13.0


def test_unknown_preset():
    with pytest.raises(ScenarioError, match="unknown preset"):
        load_preset("moon_link")


def test_seed_required():
    with pytest.raises(ScenarioError, match="seed"):
        parse_scenario("name: x\n")


def test_negative_loss_rejected_with_field_name():
    with pytest.raises(ScenarioError, match="channel_loss_db"):
        parse_scenario("seed: 1\nchannel_loss_db: -3\n")


@pytest.mark.parametrize("text,field", [("seed: 1\nfoo: 2\n", "foo"), ("seed: 1\ndetector:\n  gain: 2\n", "detector.gain")])
def test_unknown_keys_rejected(text, field):
    with pytest.raises(ScenarioError, match=field.replace(".", r"\.")):
        parse_scenario(text)


def test_yaml_error_has_line_info():
    with pytest.raises(ScenarioError, match=r"line 3, column"):
        parse_scenario("seed: 1\nmu_key: 0.1\nname: @lab\n")


def test_non_mapping_rejected():
    with pytest.raises(ScenarioError, match="mapping"):
        parse_scenario("- 1\n- 2\n")


@pytest.mark.parametrize(
    "text",
    [
        "seed: 1\neffective_clock_hz: 2.0e7\n",
        "seed: 1\nmu_key: 30\n",
        "seed: 1\npulse:\n  crystal_delay_s: 2.0e-9\n",
        "seed: 1\nqber_window_bits: 50\n",
        "seed: 1\nmu_key: 0\n",
    ],
)
def test_inconsistent_values_rejected(text):
    with pytest.raises(ScenarioError):
        parse_scenario(text)


def test_missing_file(tmp_path):
    with pytest.raises(ScenarioError, match="nope.yaml"):
        load_scenario(tmp_path / "nope.yaml")


@pytest.mark.parametrize("name", ["lab_50km", "urban_30km"])
def test_config_echo_round_trips(name, tmp_path):
    sc = load_preset(name)
    path = tmp_path / "echo.yaml"
    path.write_text(yaml.safe_dump(sc.to_dict()))
    assert load_scenario(path) == sc
    assert resolve(str(path)) == sc
    assert resolve(name) == sc


def test_with_value_nested_and_validated():
    sc = load_preset("lab_50km")
    off = sc.with_value("pulse.pmd_compensation", False)
    assert off.pulse.pmd_compensation is False and sc.pulse.pmd_compensation is True
    assert sc.with_value("mu_key", 0.02).mu_key == 0.02
    with pytest.raises(ScenarioError):
        sc.with_value("mu_key", -1)
    with pytest.raises(ScenarioError):
        sc.with_value("pulse.nothing", 1)
    with pytest.raises(ScenarioError):
        sc.with_value("mu_key.x", 1)


def test_field_names():
    names = field_names()
    assert "pulse.pmd_compensation" in names and "detector.efficiency" in names
    assert "pulse" not in names and "seed" in names


def test_intrinsic_error_follows_compensation():
    sc = load_preset("lab_50km")
    assert sc.intrinsic_error() == 0.0
    off = sc.with_value("pulse.pmd_compensation", False).intrinsic_error()
    assert 0.05 < off < 0.15


def test_calibration_params_use_effective_clock():
    sc = load_preset("urban_30km")
    p = sc.calibration_params()
    assert p.clock_hz == sc.effective_clock_hz
    assert p.target_qber == sc.calibration.target_qber


def test_build_chain_is_seeded():
    sc = load_preset("lab_50km")
    a = build_chain(sc, np.random.default_rng(1))
    b = build_chain(sc, np.random.default_rng(1))
    assert np.array_equal(a.channel.unitary.m, b.channel.unitary.m)
    assert a.pc1 == b.pc1 and a.pc2 == b.pc2 and a.pc3 == b.pc3
    assert a.attenuator.mode is AttenuatorMode.KEY_SHARING
    assert a.mu_at_bob() == pytest.approx(0.1 * 10 ** (-1.2))


def test_topology_from_yaml():
    sc = parse_scenario("seed: 3\ntopology: splice45\n")
    assert sc.topology is Topology.SPLICE45
    assert isinstance(sc, Scenario)
