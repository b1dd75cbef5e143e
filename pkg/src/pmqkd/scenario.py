"""Scenario configuration: one YAML file per run, validated by a strict schema.

Unknown keys are rejected at every nesting level and the seed is mandatory,
so a config file plus its seed pins down a run completely.
"""

from __future__ import annotations

import math
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .calibration import CalibrationParams
from .chain import ModulatorPhases, OpticalChain, Topology, randomize_controllers
from .optics import Attenuator, Detector, FiberChannel, random_unitary
from .pulse import intrinsic_error

PRESET_PACKAGE = "pmqkd.presets"


class ScenarioError(ValueError):
    """Config file could not be parsed or failed validation."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DetectorConfig(_Strict):
    # fitted values, not measured ones: the source reports only aggregate rates
    efficiency: float = Field(0.10, gt=0.0, le=1.0)
    dark_prob: float = Field(5e-6, ge=0.0, lt=1.0)


class PulseConfig(_Strict):
    duration_fwhm_s: float = Field(1e-9, gt=0.0)
    chirp_rad_s2: float = 2e20
    crystal_delay_s: float = Field(2e-12, ge=0.0)
    pmd_compensation: bool = True

    @model_validator(mode="after")
    def _delay_inside_pulse(self):
        if self.crystal_delay_s >= self.duration_fwhm_s:
            raise ValueError("crystal_delay_s must be shorter than the pulse")
        return self


class CalibrationConfig(_Strict):
    pulses_per_cell: int = Field(20_000, ge=1)
    check_pulses_per_cell: int = Field(40_000, ge=1)
    probe_step: float = Field(3.0, gt=0.0)
    lr_pc1: float = Field(100.0, ge=0.0)
    lr_pc2: float = Field(3000.0, ge=0.0)
    lr_pc3: float = Field(500.0, ge=0.0)
    tol: float = Field(1e-4, ge=0.0)
    max_iters: int = Field(20, ge=1)
    sweeps: int = Field(1, ge=1)
    max_outer: int = Field(15, ge=1)
    target_qber: float = Field(0.01, gt=0.0, lt=0.5)
    restart_qber: float = Field(0.2, gt=0.0, le=0.5)
    patience: int = Field(2, ge=1)
    min_improvement: float = Field(0.005, ge=0.0)
    settle_time_s: float = Field(0.05, ge=0.0)
    wrap: bool = True


class Scenario(_Strict):
    name: str = "custom"
    seed: int = Field(ge=0)
    topology: Topology = Topology.THREE_PC
    clock_hz: float = Field(1e7, gt=0.0)
    effective_clock_hz: float = Field(5e6, gt=0.0)
    mu_key: float = Field(0.1, gt=0.0)
    mu_cal: float = Field(20.0, gt=0.0)
    channel_loss_db: float = Field(10.0, ge=0.0)
    bob_loss_db: float = Field(2.0, ge=0.0)
    drift_rate: float = Field(0.0, ge=0.0)
    background_rate: float = Field(0.0, ge=0.0, lt=1.0)
    detector: DetectorConfig = DetectorConfig()
    pulse: PulseConfig = PulseConfig()
    calibration: CalibrationConfig = CalibrationConfig()
    qber_threshold: float = Field(0.05, gt=0.0, lt=0.5)
    qber_window_bits: int = Field(2000, ge=100)
    block_s: float = Field(1.0, gt=0.0)
    duration_s: float = Field(3600.0, ge=0.0)

    @model_validator(mode="after")
    def _consistent(self):
        if self.effective_clock_hz > self.clock_hz:
            raise ValueError("effective_clock_hz must not exceed clock_hz")
        if self.mu_key > self.mu_cal:
            raise ValueError("mu_key must not exceed mu_cal")
        return self

    def calibration_params(self) -> CalibrationParams:
        return CalibrationParams(clock_hz=self.effective_clock_hz, **self.calibration.model_dump())

    def intrinsic_error(self) -> float:
        p = self.pulse
        return intrinsic_error(
            p.duration_fwhm_s, p.chirp_rad_s2, p.crystal_delay_s, compensated=p.pmd_compensation
        )

    def to_dict(self) -> dict[str, Any]:
        return self.model_dump(mode="json")

    def with_value(self, dotted: str, value: Any) -> Scenario:
        """Copy with one (possibly nested, dot-separated) field replaced and re-validated."""
        data = self.to_dict()
        node = data
        *parents, leaf = dotted.split(".")
        for key in parents:
            if not isinstance(node.get(key), dict):
                raise ScenarioError(f"unknown scenario field {dotted!r}")
            node = node[key]
        if leaf not in node:
            raise ScenarioError(f"unknown scenario field {dotted!r}")
        node[leaf] = value
        return scenario_from_dict(data)


def field_names(model: type[BaseModel] = Scenario, prefix: str = "") -> list[str]:
    """Dotted names of every leaf field, e.g. ``pulse.pmd_compensation``."""
    out = []
    for name, info in model.model_fields.items():
        ann = info.annotation
        if isinstance(ann, type) and issubclass(ann, BaseModel):
            out.extend(field_names(ann, f"{prefix}{name}."))
        else:
            out.append(prefix + name)
    return out


def _format_validation(err: ValidationError, source: str) -> str:
    lines = [f"{source}: invalid scenario"]
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"]) or "<root>"
        lines.append(f"  {loc}: {e['msg']}")
    return "\n".join(lines)


def scenario_from_dict(data: dict[str, Any], source: str = "<dict>") -> Scenario:
    try:
        return Scenario.model_validate(data)
    except ValidationError as err:
        raise ScenarioError(_format_validation(err, source)) from None


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        where = f" line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ScenarioError(f"{source}:{where} YAML parse error: {getattr(err, 'problem', err)}") from None
    if not isinstance(data, dict):
        raise ScenarioError(f"{source}: top level must be a mapping")
    return scenario_from_dict(data, source)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ScenarioError(f"{path}: {err.strerror or err}") from None
    return parse_scenario(text, str(path))


def preset_names() -> list[str]:
    files = resources.files(PRESET_PACKAGE).iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".yaml"))


def load_preset(name: str) -> Scenario:
    if name not in preset_names():
        raise ScenarioError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    text = resources.files(PRESET_PACKAGE).joinpath(f"{name}.yaml").read_text()
    return parse_scenario(text, f"preset:{name}")


def resolve(name_or_path: str) -> Scenario:
    """A preset name or a path to a YAML file."""
    if name_or_path in preset_names() and not Path(name_or_path).exists():
        return load_preset(name_or_path)
    return load_scenario(name_or_path)


def build_chain(scenario: Scenario, rng: np.random.Generator) -> OpticalChain:
    """Chain with a random channel, random modulator offsets and random controller voltages."""
    two_pi = 2.0 * math.pi
    det = scenario.detector
    chain = OpticalChain(
        topology=scenario.topology,
        channel=FiberChannel(
            loss_db=scenario.channel_loss_db,
            drift_rate=scenario.drift_rate,
            unitary=random_unitary(rng),
            background_rate=scenario.background_rate,
        ),
        attenuator=Attenuator(mu_key=scenario.mu_key, mu_cal=scenario.mu_cal),
        spd1=Detector(det.efficiency, det.dark_prob, "SPD1"),
        spd2=Detector(det.efficiency, det.dark_prob, "SPD2"),
        bob_loss_db=scenario.bob_loss_db,
        pm1=ModulatorPhases(*rng.uniform(0.0, two_pi, 2)),
        pm2=ModulatorPhases(*rng.uniform(0.0, two_pi, 2)),
        launch_phase=float(rng.uniform(0.0, two_pi)),
        analysis_phase=float(rng.uniform(0.0, two_pi)),
        intrinsic_error=scenario.intrinsic_error(),
    )
    return randomize_controllers(chain, rng)
