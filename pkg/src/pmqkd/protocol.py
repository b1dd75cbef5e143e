"""BB84 session engine: encoding, per-pulse transmission, sifting and session statistics.

Detector convention: a click on SPD1 alone means bit 0, on SPD2 alone bit 1.
Pulses with no click or with both detectors firing are dropped at sifting.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .calibration import Action, CalibrationReport, SessionState, calibrate_all, supervise
from .chain import ALICE_PHASES, BOB_PHASES, LASER_STATE, OpticalChain
from .jones import JonesVector
from .optics import detect, drift_step, route_pbs

log = logging.getLogger(__name__)

MIN_WINDOW_BITS = 100


class Basis(enum.IntEnum):
    LINEAR = 0
    CIRCULAR = 1


@dataclass(frozen=True)
class AliceSymbol:
    bit: int
    basis: Basis

    def __post_init__(self):
        if self.bit not in (0, 1):
            raise ValueError("bit must be 0 or 1")
        object.__setattr__(self, "basis", Basis(self.basis))

    @property
    def index(self) -> int:
        """Position of the shift in :data:`ALICE_PHASES`."""
        return 2 * self.bit + int(self.basis)

    @property
    def phase(self) -> float:
        return ALICE_PHASES[self.index]


@dataclass(frozen=True)
class BobChoice:
    basis: Basis

    def __post_init__(self):
        object.__setattr__(self, "basis", Basis(self.basis))

    @property
    def index(self) -> int:
        return int(self.basis)

    @property
    def phase(self) -> float:
        return BOB_PHASES[self.index]


def encode(bit: int, basis: Basis | int) -> AliceSymbol:
    return AliceSymbol(bit, Basis(basis))


@dataclass(frozen=True)
class PulseRecord:
    index: int
    alice: AliceSymbol
    bob: BobChoice
    click1: bool
    click2: bool

    @property
    def matched(self) -> bool:
        return self.alice.basis == self.bob.basis

    @property
    def single_click(self) -> bool:
        return self.click1 != self.click2


def transmit_one(
    alice: AliceSymbol, bob: BobChoice, chain: OpticalChain, rng: np.random.Generator, index: int = 0
) -> PulseRecord:
    """Propagate one pulse through the chain and draw both detector outcomes."""
    out = chain.output_matrix(alice.phase, bob.phase) @ LASER_STATE
    p1, _ = route_pbs(JonesVector.from_array(out))
    e = chain.intrinsic_error
    p1 = (1.0 - e) * p1 + e * (1.0 - p1)
    mu = chain.mu_at_bob()
    click1 = detect(mu * p1, chain.effective_detector(chain.spd1), rng)
    click2 = detect(mu * (1.0 - p1), chain.effective_detector(chain.spd2), rng)
    return PulseRecord(index, alice, bob, click1, click2)


def sift(records) -> tuple[list[int], list[int], list[int]]:
    """Matched-basis, single-click pulses: (pulse indices, Alice's bits, Bob's bits)."""
    kept, a_bits, b_bits = [], [], []
    for r in records:
        if r.matched and r.single_click:
            kept.append(r.index)
            a_bits.append(r.alice.bit)
            b_bits.append(0 if r.click1 else 1)
    return kept, a_bits, b_bits


@dataclass
class PulseBatch:
    """Columns of a vectorized run, one entry per pulse."""

    alice_bit: np.ndarray
    alice_basis: np.ndarray
    bob_basis: np.ndarray
    click1: np.ndarray
    click2: np.ndarray

    def __len__(self) -> int:
        return self.alice_bit.size


def transmit_batch(chain: OpticalChain, n: int, rng: np.random.Generator) -> PulseBatch:
    """``n`` pulses with uniformly random bits and bases, clicks drawn per pulse."""
    if n < 0:
        raise ValueError("n must be >= 0")
    bit = rng.integers(0, 2, n)
    a_basis = rng.integers(0, 2, n)
    b_basis = rng.integers(0, 2, n)
    c1, c2 = chain.click_tables()
    a_idx = 2 * bit + a_basis
    click1 = rng.random(n) < c1[a_idx, b_basis]
    click2 = rng.random(n) < c2[a_idx, b_basis]
    return PulseBatch(bit, a_basis, b_basis, click1, click2)


def sift_batch(batch: PulseBatch) -> tuple[np.ndarray, np.ndarray]:
    keep = (batch.alice_basis == batch.bob_basis) & (batch.click1 != batch.click2)
    return batch.alice_bit[keep], batch.click2[keep].astype(np.int64)


@dataclass(frozen=True)
class SiftCounts:
    """Additive tallies; merging shards in any grouping gives the same totals."""

    sent: int = 0
    sifted: int = 0
    errors: int = 0
    double_clicks: int = 0

    def __add__(self, other: SiftCounts) -> SiftCounts:
        return SiftCounts(
            self.sent + other.sent,
            self.sifted + other.sifted,
            self.errors + other.errors,
            self.double_clicks + other.double_clicks,
        )

    @property
    def qber(self) -> float:
        return self.errors / self.sifted if self.sifted else math.nan

    @classmethod
    def from_batch(cls, batch: PulseBatch) -> SiftCounts:
        a, b = sift_batch(batch)
        matched = batch.alice_basis == batch.bob_basis
        return cls(len(batch), int(a.size), int(np.sum(a != b)), int(np.sum(matched & batch.click1 & batch.click2)))


# matched cells (alice index, bob index) and the outcome column that is an error;
# outcome columns are (none, SPD1 only, SPD2 only, both)
_MATCHED = (((0, 0), 2), ((2, 0), 1), ((1, 1), 2), ((3, 1), 1))


def sample_counts(chain: OpticalChain, n: int, rng: np.random.Generator) -> SiftCounts:
    """Tallies of ``n`` random pulses drawn cell by cell; same distribution as :func:`transmit_batch`."""
    if n == 0:
        return SiftCounts()
    table = chain.outcome_tables()
    per_cell = rng.multinomial(n, np.full(8, 1.0 / 8.0)).reshape(4, 2)
    sifted = errors = doubles = 0
    for (a, b), wrong in _MATCHED:
        probs = table[a, b] / table[a, b].sum()
        none, only1, only2, both = rng.multinomial(per_cell[a, b], probs)
        sifted += only1 + only2
        errors += only2 if wrong == 2 else only1
        doubles += both
    return SiftCounts(n, int(sifted), int(errors), int(doubles))


def expected_sifted_probability(chain: OpticalChain) -> float:
    """Exact per-pulse probability of producing a sifted bit."""
    table = chain.outcome_tables()
    return float(sum(table[cell][1] + table[cell][2] for cell, _ in _MATCHED) / 8.0)


def expected_qber(chain: OpticalChain) -> float:
    table = chain.outcome_tables()
    good = sum(table[cell][1 if wrong == 2 else 2] for cell, wrong in _MATCHED)
    bad = sum(table[cell][wrong] for cell, wrong in _MATCHED)
    return float(bad / (good + bad))


@dataclass(frozen=True)
class WindowPoint:
    t_seconds: float
    qber: float
    window_sifted_bits: int


def qber_window(records, window: int, clock_hz: float = 1.0) -> list[WindowPoint]:
    """Error rate over consecutive blocks of ``window`` sifted bits; a trailing partial block is dropped.

    Each point is stamped with the time of the pulse that completed its block.
    """
    if window < MIN_WINDOW_BITS:
        raise ValueError(f"window must hold at least {MIN_WINDOW_BITS} sifted bits")
    kept, a_bits, b_bits = sift(records)
    out = []
    for start in range(0, len(kept) - window + 1, window):
        stop = start + window
        errs = sum(a != b for a, b in zip(a_bits[start:stop], b_bits[start:stop]))
        out.append(WindowPoint((kept[stop - 1] + 1) / clock_hz, errs / window, window))
    return out


@dataclass
class SessionStats:
    sent: int = 0
    sifted: int = 0
    errors: int = 0
    double_clicks: int = 0
    data_time_s: float = 0.0
    calibration_time_s: float = 0.0
    recalibrations: int = 0
    qber_series: list[WindowPoint] = field(default_factory=list)
    calibrations: list[CalibrationReport] = field(default_factory=list)
    final_chain: OpticalChain | None = field(default=None, repr=False)

    @property
    def elapsed_s(self) -> float:
        return self.data_time_s + self.calibration_time_s

    @property
    def qber(self) -> float:
        return self.errors / self.sifted if self.sifted else 0.0

    @property
    def sifted_rate(self) -> float:
        """Sifted bits per second of wall time, calibration included."""
        return self.sifted / self.elapsed_s if self.elapsed_s > 0 else 0.0

    @property
    def duty_cycle_data(self) -> float:
        return self.data_time_s / self.elapsed_s if self.elapsed_s > 0 else 1.0

    @property
    def mean_window_qber(self) -> float:
        if not self.qber_series:
            return 0.0
        return float(np.mean([p.qber for p in self.qber_series]))

    def add(self, counts: SiftCounts) -> None:
        self.sent += counts.sent
        self.sifted += counts.sifted
        self.errors += counts.errors
        self.double_clicks += counts.double_clicks

    def to_dict(self) -> dict:
        return {
            "sent": self.sent,
            "sifted": self.sifted,
            "errors": self.errors,
            "double_clicks": self.double_clicks,
            "qber": self.qber,
            "mean_window_qber": self.mean_window_qber,
            "sifted_rate_bps": self.sifted_rate,
            "duty_cycle_data": self.duty_cycle_data,
            "data_time_s": self.data_time_s,
            "calibration_time_s": self.calibration_time_s,
            "recalibrations": self.recalibrations,
            "windows": len(self.qber_series),
        }


def _drift(chain: OpticalChain, dt: float, rng: np.random.Generator) -> OpticalChain:
    return chain.with_channel(drift_step(chain.channel, dt, rng))


def run_session(scenario, duration_s: float, rng: np.random.Generator, chain: OpticalChain | None = None) -> SessionStats:
    """Key exchange interleaved with supervised recalibration under channel drift.

    Without ``chain`` a fresh chain with random controller voltages is built
    and calibrated first; that calibration counts toward the duty cycle.
    Key sharing advances in blocks of ``scenario.block_s``; the windowed
    error rate is checked whenever a block completes a window.
    """
    from .scenario import build_chain

    if duration_s < 0:
        raise ValueError("duration must be >= 0")
    stats = SessionStats()
    if duration_s == 0:
        return stats
    params = scenario.calibration_params()
    if chain is None:
        chain = build_chain(scenario, rng)
        report = calibrate_all(chain, params, rng, drift=_drift)
        chain = report.chain
        stats.calibrations.append(report)
        stats.calibration_time_s += report.elapsed_s

    state = SessionState()
    win_bits = win_errs = 0
    clock = scenario.effective_clock_hz
    while stats.elapsed_s < duration_s:
        dt = min(scenario.block_s, duration_s - stats.elapsed_s)
        counts = sample_counts(chain, int(round(dt * clock)), rng)
        stats.add(counts)
        stats.data_time_s += dt
        win_bits += counts.sifted
        win_errs += counts.errors
        chain = _drift(chain, dt, rng)
        if win_bits < scenario.qber_window_bits:
            continue
        point = WindowPoint(stats.elapsed_s, win_errs / win_bits, win_bits)
        stats.qber_series.append(point)
        win_bits = win_errs = 0
        state.window_qber = point.qber
        state.data_time_s = stats.data_time_s
        state.calibration_time_s = stats.calibration_time_s
        if supervise(state, scenario.qber_threshold) is Action.RECALIBRATE:
            report = calibrate_all(chain, params, rng, drift=_drift)
            chain = report.chain
            stats.calibrations.append(report)
            stats.calibration_time_s += report.elapsed_s
            stats.recalibrations += 1
            log.debug("t=%.0fs recalibrated: qber %.3f -> %.3f", stats.elapsed_s, point.qber, report.final_qber)
    stats.final_chain = chain
    return stats
