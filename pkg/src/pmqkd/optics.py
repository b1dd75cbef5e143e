"""Element models for the link: controllers, splices, plates, channel, VOA, detectors."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .jones import JonesMatrix, JonesVector, reunitarize, su2_rotation

TWO_PI = 2.0 * math.pi

# Fixed stage axes of the fiber-squeezer controller (radians).
PC_AXES = (0.0, math.pi / 4.0, 0.0)


def rotation_matrix(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]], dtype=complex)


def retarder(axis: float, retardance: float) -> np.ndarray:
    """Linear retarder with its slow axis at ``axis``; symmetric phase split."""
    r = rotation_matrix(axis)
    core = np.diag([np.exp(-0.5j * retardance), np.exp(0.5j * retardance)])
    return r @ core @ r.T


@dataclass(frozen=True)
class PolarizationController:
    """Three-stage piezo controller, stages at 0, 45 and 0 degrees.

    Retardance of stage ``k`` is ``gains[k] * voltages[k]``. The default range
    of 100 V at 0.04*pi rad/V covers two full turns per stage.
    """

    voltages: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gains: tuple[float, float, float] = (0.04 * math.pi,) * 3
    max_voltage: tuple[float, float, float] = (100.0,) * 3
    axes: tuple[float, float, float] = PC_AXES

    def __post_init__(self):
        object.__setattr__(self, "voltages", tuple(float(v) for v in self.voltages))

    def with_voltage(self, index: int, value: float) -> PolarizationController:
        volts = list(self.voltages)
        volts[index] = float(value)
        return replace(self, voltages=tuple(volts))

    def with_voltages(self, volts) -> PolarizationController:
        return replace(self, voltages=tuple(float(v) for v in volts))

    def clip(self, index: int, value: float) -> float:
        return float(min(max(value, 0.0), self.max_voltage[index]))

    def period(self, index: int) -> float:
        """Voltage for one full retardance turn; equal settings up to a global sign."""
        return TWO_PI / self.gains[index]

    def wrap(self, index: int, value: float) -> float:
        """Bring ``value`` into range by whole retardance turns, clipping if the range is shorter."""
        per = self.period(index)
        vmax = self.max_voltage[index]
        if per > vmax:
            return self.clip(index, value)
        while value > vmax:
            value -= per
        while value < 0.0:
            value += per
        return float(value)

    def in_range(self) -> bool:
        return all(0.0 <= v <= vmax for v, vmax in zip(self.voltages, self.max_voltage))

    def random(self, rng: np.random.Generator) -> PolarizationController:
        return self.with_voltages(rng.uniform(0.0, self.max_voltage))


def pc_matrix(pc: PolarizationController) -> JonesMatrix:
    if not pc.in_range():
        raise ValueError(f"controller voltages {pc.voltages} outside [0, {pc.max_voltage}]")
    out = np.eye(2, dtype=complex)
    for axis, gain, volt in zip(pc.axes, pc.gains, pc.voltages):
        out = retarder(axis, gain * volt) @ out
    return JonesMatrix(out)


def euler_retardances(target: JonesMatrix) -> tuple[float, float, float]:
    """Retardances (d1, d2, d3) in [0, 2 pi) with Rz(d3) Rx(d2) Rz(d1) equal to ``target`` up to phase."""
    t = target.m / np.sqrt(np.linalg.det(target.m))
    a, b = t[0, 0], t[0, 1]
    d2 = 2.0 * math.acos(min(1.0, abs(a)))
    total = -2.0 * np.angle(a) if abs(a) > 1e-12 else 0.0
    diff = 2.0 * (np.angle(b) + math.pi / 2.0) if abs(b) > 1e-12 else 0.0
    d1 = 0.5 * (total + diff)
    d3 = 0.5 * (total - diff)
    return d1 % TWO_PI, d2 % TWO_PI, d3 % TWO_PI


def solve_voltages(pc: PolarizationController, target: JonesMatrix) -> PolarizationController:
    """Analytic inverse of :func:`pc_matrix` for the 0/45/0 stage layout."""
    if pc.axes != PC_AXES:
        raise ValueError("analytic solve only supports the 0/45/0 stage layout")
    volts = []
    for k, d in enumerate(euler_retardances(target)):
        v = d / pc.gains[k]
        if v > pc.max_voltage[k]:
            raise ValueError(f"stage {k} cannot reach retardance {d:.3f} rad")
        volts.append(v)
    return pc.with_voltages(volts)


def splice_matrix(angle: float) -> JonesMatrix:
    """Angled splice between two polarization-maintaining fibers."""
    return JonesMatrix(rotation_matrix(angle))


def half_wave_plate(axis: float) -> JonesMatrix:
    c, s = math.cos(2.0 * axis), math.sin(2.0 * axis)
    return JonesMatrix(np.array([[c, s], [s, -c]], dtype=complex))


@dataclass(frozen=True, eq=False)
class FiberChannel:
    loss_db: float = 0.0
    drift_rate: float = 0.0
    unitary: JonesMatrix = field(default_factory=lambda: JonesMatrix(np.eye(2)))
    background_rate: float = 0.0

    def __post_init__(self):
        if self.loss_db < 0:
            raise ValueError("channel loss must be >= 0 dB")
        if self.drift_rate < 0:
            raise ValueError("drift rate must be >= 0")


def random_unitary(rng: np.random.Generator) -> JonesMatrix:
    """Haar-random element of U(2)."""
    z = (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))) / math.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return JonesMatrix(q * (d / abs(d)))


def drift_step(ch: FiberChannel, dt: float, rng: np.random.Generator) -> FiberChannel:
    """Random-walk the channel SOP transform by one small Poincare-sphere rotation."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if ch.drift_rate == 0.0:
        return ch
    angle = rng.normal(0.0, ch.drift_rate * math.sqrt(dt))
    axis = rng.standard_normal(3)
    m = reunitarize(su2_rotation(axis, angle) @ ch.unitary.m)
    return replace(ch, unitary=JonesMatrix(m, ch.unitary.frame))


class AttenuatorMode(str, enum.Enum):
    KEY_SHARING = "key_sharing"
    CALIBRATION = "calibration"


@dataclass(frozen=True)
class Attenuator:
    mu_key: float = 0.1
    mu_cal: float = 20.0
    mode: AttenuatorMode = AttenuatorMode.KEY_SHARING

    def __post_init__(self):
        if self.mu_key < 0 or self.mu_cal < 0:
            raise ValueError("mean photon numbers must be >= 0")
        if self.mu_key > self.mu_cal:
            raise ValueError("mu_key must not exceed mu_cal")

    @property
    def mu(self) -> float:
        return self.mu_cal if self.mode is AttenuatorMode.CALIBRATION else self.mu_key

    def with_mode(self, mode: AttenuatorMode) -> Attenuator:
        return replace(self, mode=AttenuatorMode(mode))


def mean_photons(att: Attenuator, chain_loss_db: float) -> float:
    if chain_loss_db < 0:
        raise ValueError("chain loss must be >= 0 dB")
    return att.mu * 10.0 ** (-chain_loss_db / 10.0)


@dataclass(frozen=True)
class Detector:
    efficiency: float = 0.10
    dark_prob: float = 5e-6
    label: str = "SPD1"

    def __post_init__(self):
        if not 0.0 < self.efficiency <= 1.0:
            raise ValueError("detector efficiency must be in (0, 1]")
        if not 0.0 <= self.dark_prob < 1.0:
            raise ValueError("dark-count probability must be in [0, 1)")


def click_probability(mean_photons_at_detector, det: Detector):
    """Click probability per window for Poissonian input; vectorizes over the mean."""
    mu = np.asarray(mean_photons_at_detector, dtype=float)
    p = -np.expm1(-det.efficiency * mu + math.log1p(-det.dark_prob))
    return float(p) if p.ndim == 0 else p


def detect(mean_photons_at_detector: float, det: Detector, rng: np.random.Generator) -> bool:
    return bool(rng.random() < click_probability(mean_photons_at_detector, det))


def route_pbs(v: JonesVector) -> tuple[float, float]:
    """Split probabilities onto the PBS ports (SPD1 = ordinary, SPD2 = extraordinary)."""
    p1 = abs(v.a_o) ** 2
    p2 = abs(v.a_e) ** 2
    s = p1 + p2
    if s == 0.0:
        raise ValueError("zero vector cannot be routed")
    return p1 / s, p2 / s
