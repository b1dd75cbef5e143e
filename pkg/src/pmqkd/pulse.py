"""Time-resolved two-component pulses: laser chirp, crystal PMD, and the swap compensation.

Chirp is a pure quadratic phase ``exp(i * chirp * t**2)`` on a Gaussian
envelope. Crystal PMD delays one field component; fractional-sample delays
use a frequency-domain phase ramp (band-limited, deterministic). The sample
window must be wide enough that the circular wrap of the FFT only touches
negligible tails.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .jones import JonesMatrix, JonesVector

MIN_SAMPLES_PER_FWHM = 64


class Axis(str, enum.Enum):
    ORDINARY = "ordinary"
    EXTRAORDINARY = "extraordinary"

    @property
    def index(self) -> int:
        return 0 if self is Axis.ORDINARY else 1


@dataclass(frozen=True, eq=False)
class SampledPulse:
    dt: float
    samples: np.ndarray  # shape (n, 2): columns e_o, e_e

    def __post_init__(self):
        arr = np.array(self.samples, dtype=complex)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError("samples must have shape (n, 2)")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def times(self) -> np.ndarray:
        n = len(self)
        return (np.arange(n) - (n - 1) / 2.0) * self.dt

    @property
    def intensity(self) -> np.ndarray:
        return np.sum(np.abs(self.samples) ** 2, axis=1)

    @property
    def energy(self) -> float:
        return float(self.intensity.sum() * self.dt)

    @property
    def span(self) -> float:
        return len(self) * self.dt

    def sop(self, i: int) -> JonesVector:
        return JonesVector.from_array(self.samples[i]).normalized()


def gaussian_energy(duration_fwhm: float) -> float:
    """Closed form of the energy of a unit-peak Gaussian pulse with the given intensity FWHM."""
    return duration_fwhm * math.sqrt(math.pi / (4.0 * math.log(2.0)))


def chirped_pulse(
    duration_fwhm: float,
    chirp: float,
    sop: JonesVector,
    dt: float,
    window_fwhm: float = 4.0,
) -> SampledPulse:
    """Gaussian pulse with intensity FWHM ``duration_fwhm`` on ``[-window, window] * fwhm``."""
    if duration_fwhm <= 0 or dt <= 0:
        raise ValueError("duration and dt must be positive")
    if duration_fwhm / dt < MIN_SAMPLES_PER_FWHM:
        raise ValueError(
            f"dt={dt:g} gives {duration_fwhm / dt:.1f} samples across the FWHM; "
            f"need at least {MIN_SAMPLES_PER_FWHM}"
        )
    if not sop.is_normalized():
        raise ValueError("sop must be normalized")
    half = int(math.ceil(window_fwhm * duration_fwhm / dt))
    # the FFT delay is only exact for a band-limited field: the chirp phase
    # may not advance by more than pi/2 per sample anywhere in the window
    edge_step = 2.0 * abs(chirp) * half * dt * dt
    if edge_step > math.pi / 2.0:
        raise ValueError(
            f"dt={dt:g} aliases the chirp (phase step {edge_step:.2f} rad per sample at the window edge)"
        )
    t = np.arange(-half, half + 1) * dt
    field = np.exp(-2.0 * math.log(2.0) * (t / duration_fwhm) ** 2 + 1j * chirp * t**2)
    return SampledPulse(dt, np.outer(field, sop.to_array()))


def _fractional_delay(x: np.ndarray, delay: float, dt: float) -> np.ndarray:
    freqs = np.fft.fftfreq(x.size, d=dt)
    return np.fft.ifft(np.fft.fft(x) * np.exp(-2j * math.pi * freqs * delay))


def apply_pmd(p: SampledPulse, delay: float, delayed_axis: Axis | str) -> SampledPulse:
    """Delay one crystal-axis component by ``delay`` seconds."""
    axis = Axis(delayed_axis)
    if abs(delay) >= p.span / 2.0:
        raise ValueError(f"delay {delay:g}s exceeds the pulse window ({p.span:g}s)")
    if delay == 0.0:
        return p
    out = p.samples.copy()
    out[:, axis.index] = _fractional_delay(out[:, axis.index], delay, p.dt)
    return SampledPulse(p.dt, out)


def rotate(p: SampledPulse, m: JonesMatrix) -> SampledPulse:
    """Apply a time-independent Jones matrix to every sample."""
    return SampledPulse(p.dt, p.samples @ m.m.T)


@dataclass(frozen=True, eq=False)
class CoherencyMatrix:
    rho: np.ndarray

    def __post_init__(self):
        rho = np.array(self.rho, dtype=complex)
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.rho)

    @property
    def dop(self) -> float:
        lo, hi = self.eigenvalues
        return float(hi - lo)


def coherency(p: SampledPulse) -> CoherencyMatrix:
    """Energy-weighted time average of the instantaneous outer product, trace-normalized."""
    e = p.samples
    total = np.sum(np.abs(e) ** 2)
    if total == 0.0:
        raise ValueError("pulse has zero energy")
    rho = (e.T @ e.conj()) / total
    return CoherencyMatrix(0.5 * (rho + rho.conj().T))


def degree_of_polarization(p: SampledPulse) -> float:
    return coherency(p).dop


def pulse_qber(p: SampledPulse, measurement_matrix: JonesMatrix) -> float:
    """Energy-weighted probability of reaching the wrong (SPD2) port.

    ``measurement_matrix`` maps the intended SOP onto the SPD1 port.
    """
    out = p.samples @ measurement_matrix.m.T
    power = np.abs(out) ** 2
    return float(power[:, 1].sum() / power.sum())


def qber_from_coherency(rho: CoherencyMatrix, measurement_matrix: JonesMatrix) -> float:
    """Same quantity as :func:`pulse_qber`, pushed through the eigen-decomposition of ``rho``."""
    vals, vecs = np.linalg.eigh(rho.rho)
    m = measurement_matrix.m
    return float(sum(lam * abs((m @ vecs[:, k])[1]) ** 2 for k, lam in enumerate(vals)))


def analyzer_for(sop: JonesVector) -> JonesMatrix:
    """Unitary that sends ``sop`` to the SPD1 port."""
    u = sop.normalized().to_array()
    return JonesMatrix(np.array([[np.conj(u[0]), np.conj(u[1])], [-u[1], u[0]]]))


def swap_compensation_chain(
    p: SampledPulse,
    tau_alice: float,
    rotation: JonesMatrix,
    tau_bob: float,
    delayed_axis: Axis | str = Axis.EXTRAORDINARY,
) -> SampledPulse:
    """Alice's crystal PMD, the inter-modulator rotation, then Bob's crystal PMD on the same axis."""
    if not rotation.is_unitary(1e-9):
        raise ValueError("rotation must be unitary")
    out = apply_pmd(p, tau_alice, delayed_axis)
    out = rotate(out, rotation)
    return apply_pmd(out, tau_bob, delayed_axis)


def best_analyzer_qber(p: SampledPulse) -> float:
    """Wrong-port probability after aligning the analyzer with the dominant SOP.

    This is what a perfectly calibrated receiver sees: ``(1 - DOP) / 2``.
    """
    rho = coherency(p)
    vals, vecs = np.linalg.eigh(rho.rho)
    return qber_from_coherency(rho, analyzer_for(JonesVector.from_array(vecs[:, -1])))


def intrinsic_error(
    duration_fwhm: float,
    chirp: float,
    tau_alice: float,
    tau_bob: float | None = None,
    compensated: bool = True,
    samples_per_fwhm: int = 128,
) -> float:
    """Per-pulse wrong-port probability caused by chirp and crystal PMD.

    A 45-degree launch is used; all four BB84 states lie on the same great
    circle and see the same intra-pulse SOP spread. ``compensated`` selects
    the ideal component swap between the modulators; otherwise both crystals
    delay the same component.
    """
    from . import jones

    if tau_bob is None:
        tau_bob = tau_alice
    sop = JonesVector(1 / math.sqrt(2), 1 / math.sqrt(2))
    window = 4.0
    dt = duration_fwhm / samples_per_fwhm
    if chirp != 0.0:
        dt = min(dt, math.pi / (4.0 * abs(chirp) * window * duration_fwhm * 1.001))
    p = chirped_pulse(duration_fwhm, chirp, sop, dt, window)
    rotation = jones.SWAP if compensated else jones.IDENTITY
    out = swap_compensation_chain(p, tau_alice, rotation, tau_bob)
    return max(0.0, best_analyzer_qber(out))
