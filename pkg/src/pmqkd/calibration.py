"""Autonomous controller tuning from detector click histograms.

Alice cycles four modulator shifts and Bob two, giving eight histogram
cells. Each controller minimizes its own statistic by finite-difference
gradient descent over one voltage channel at a time:

* PC2 equalizes the four pairs of cells that differ only by a common shift
  of both modulators (true exactly when the link swaps the crystal axes).
* PC1 maximizes the separation between logical 0 and 1 in matched bases.
* PC3 (or the single controller of the passive topologies) minimizes the
  error rate directly.

Sign convention: logical 0 belongs on SPD1 and logical 1 on SPD2.
Relabeling the detectors flips the sign of :func:`pc1_objective` and leaves
the other statistics unchanged.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .chain import OpticalChain, Topology
from .optics import AttenuatorMode, PolarizationController

log = logging.getLogger(__name__)

# Cells that must be indistinguishable once the link swaps the axes:
# (alice index, bob index) with alice shifts 0, pi/2, pi, 3pi/2 and bob 0, pi/2.
INDISTINGUISHABLE_PAIRS = (
    ((0, 0), (1, 1)),
    ((1, 0), (2, 1)),
    ((2, 0), (3, 1)),
    ((3, 0), (0, 1)),
)
# Matched-basis cells with the detector index that signals an error.
MATCHED_CELLS = (((0, 0), 1), ((2, 0), 0), ((1, 1), 1), ((3, 1), 0))


class NoClicksError(RuntimeError):
    """No detector fired at all: broken chain or misconfigured losses."""


@dataclass(frozen=True)
class CalibrationParams:
    pulses_per_cell: int = 20_000
    check_pulses_per_cell: int = 40_000
    probe_step: float = 3.0  # volts
    lr_pc1: float = 100.0  # volts**2 per unit objective
    lr_pc2: float = 3000.0
    lr_pc3: float = 500.0
    tol: float = 1e-4
    max_iters: int = 20
    sweeps: int = 1
    max_outer: int = 15
    target_qber: float = 0.01
    # an outer loop ending above this error rate is stuck in a degenerate
    # setting (light on one crystal axis); restart from random voltages
    restart_qber: float = 0.2
    # an attempt that gains less than min_improvement over `patience` loops
    # is restarted too; two stalled attempts at the same level mean the
    # floor is not set by the controllers, and calibration stops there
    patience: int = 2
    min_improvement: float = 0.005
    settle_time_s: float = 0.05
    clock_hz: float = 5e6
    wrap: bool = True

    def learning_rate(self, name: str) -> float:
        return {"pc1": self.lr_pc1, "pc2": self.lr_pc2, "pc3": self.lr_pc3}[name]

    def evaluation_time(self, pulses_per_cell: int) -> float:
        return 8 * pulses_per_cell / self.clock_hz + self.settle_time_s


@dataclass(frozen=True, eq=False)
class Histogram8:
    counts: np.ndarray  # shape (4, 2, 2): alice shift, bob shift, detector
    pulses_per_cell: int

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64)
        if c.shape != (4, 2, 2):
            raise ValueError("histogram needs 4 x 2 cells with two detector counts")
        if (c < 0).any() or (c > self.pulses_per_cell).any():
            raise ValueError("counts must lie in [0, pulses_per_cell]")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    def cell(self, alice_index: int, bob_index: int) -> tuple[int, int]:
        n1, n2 = self.counts[alice_index, bob_index]
        return int(n1), int(n2)

    @property
    def clicks(self) -> np.ndarray:
        return self.counts.sum(axis=-1)

    def fractions(self) -> np.ndarray:
        """Per-cell share of clicks on each detector; cells without clicks count as 1/2 each."""
        tot = self.clicks[..., None].astype(float)
        with np.errstate(invalid="ignore", divide="ignore"):
            f = np.where(tot > 0, self.counts / np.where(tot > 0, tot, 1.0), 0.5)
        return f

    def __add__(self, other: Histogram8) -> Histogram8:
        return Histogram8(self.counts + other.counts, self.pulses_per_cell + other.pulses_per_cell)


@dataclass(frozen=True)
class ObjectiveValue:
    value: float
    samples_averaged: int = 1

    def __post_init__(self):
        if self.samples_averaged < 1:
            raise ValueError("samples_averaged must be >= 1")

    def __float__(self) -> float:
        return self.value


def collect_histogram(chain: OpticalChain, pulses_per_cell: int, rng: np.random.Generator) -> Histogram8:
    """Send ``pulses_per_cell`` pulses for each of the eight shift pairs and count clicks."""
    if chain.attenuator.mode is not AttenuatorMode.CALIBRATION:
        raise ValueError("histograms are collected with the attenuator in calibration mode")
    c1, c2 = chain.click_tables()
    counts = np.stack([rng.binomial(pulses_per_cell, c1), rng.binomial(pulses_per_cell, c2)], axis=-1)
    if counts.sum() == 0:
        raise NoClicksError("no clicks in any histogram cell")
    return Histogram8(counts, pulses_per_cell)


def pc2_objective(h: Histogram8) -> ObjectiveValue:
    """Mean squared difference of normalized counts over the four indistinguishable pairs."""
    f = h.fractions()
    diffs = [f[a] - f[b] for a, b in INDISTINGUISHABLE_PAIRS]
    value = float(np.mean(np.square(diffs)))
    return ObjectiveValue(value, 8 * h.pulses_per_cell)


def pc1_objective(h: Histogram8) -> ObjectiveValue:
    """Minus the logical 1/0 separation on SPD2, summed over both matched bases (perfect: -2)."""
    f = h.fractions()
    linear = f[2, 0, 1] - f[0, 0, 1]
    circular = f[3, 1, 1] - f[1, 1, 1]
    return ObjectiveValue(-float(linear + circular), 8 * h.pulses_per_cell)


def histogram_qber(h: Histogram8) -> float:
    """Error fraction averaged over the four matched-basis cells."""
    if all(h.clicks[cell] == 0 for cell, _ in MATCHED_CELLS):
        raise NoClicksError("no clicks in matched-basis cells")
    f = h.fractions()
    return float(np.mean([f[cell][wrong] for cell, wrong in MATCHED_CELLS]))


def pc3_objective(chain: OpticalChain, pulses: int, rng: np.random.Generator) -> ObjectiveValue:
    h = collect_histogram(chain, pulses, rng)
    return ObjectiveValue(histogram_qber(h), 8 * pulses)


@dataclass
class DescentTrace:
    voltages: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    best_values: list[float] = field(default_factory=list)
    evaluations: int = 0

    @property
    def iterations(self) -> int:
        return len(self.best_values)


def descend_channel(
    objective: Callable[[PolarizationController], ObjectiveValue | float],
    controller: PolarizationController,
    channel_index: int,
    params: CalibrationParams,
    learning_rate: float | None = None,
) -> tuple[PolarizationController, DescentTrace]:
    """Central-difference gradient descent on one voltage channel.

    Probes are clipped into the controller range, so the objective is never
    evaluated outside it. Returns the best voltage seen.
    """
    if channel_index not in (0, 1, 2):
        raise ValueError("channel_index must be 0, 1 or 2")
    gamma = params.lr_pc3 if learning_rate is None else learning_rate
    trace = DescentTrace()
    bound = controller.wrap if params.wrap else controller.clip

    def f(v: float) -> float:
        trace.evaluations += 1
        value = float(objective(controller.with_voltage(channel_index, v)))
        trace.voltages.append(v)
        trace.values.append(value)
        return value

    v = controller.voltages[channel_index]
    best_v, best_f = v, f(v)
    previous = best_f
    for _ in range(params.max_iters):
        vp = bound(channel_index, v + params.probe_step)
        vm = bound(channel_index, v - params.probe_step)
        fp, fm = f(vp), f(vm)
        for cand_v, cand_f in ((vp, fp), (vm, fm)):
            if cand_f < best_f:
                best_v, best_f = cand_v, cand_f
        trace.best_values.append(best_f)
        if gamma == 0.0:
            break
        span = _span(controller, channel_index, vp, vm, v, params)
        grad = (fp - fm) / span if span else 0.0
        v = bound(channel_index, v - gamma * grad)
        current = 0.5 * (fp + fm)
        if abs(current - previous) < params.tol:
            break
        previous = current
    return controller.with_voltage(channel_index, best_v), trace


def _span(pc: PolarizationController, index: int, vp: float, vm: float, v: float, params) -> float:
    """Distance between the two probes, unwrapping a probe that crossed the range edge."""
    if not params.wrap or pc.period(index) > pc.max_voltage[index]:
        return vp - vm
    per = pc.period(index)
    up = vp + per * round((v + params.probe_step - vp) / per)
    down = vm + per * round((v - params.probe_step - vm) / per)
    return up - down


@dataclass
class CalibrationReport:
    converged: bool
    outer_loops: int
    iterations: dict[str, int]
    initial_objectives: dict[str, float]
    final_objectives: dict[str, float]
    initial_qber: float
    final_qber: float
    pulses: int
    evaluations: int
    elapsed_s: float
    restarts: int = 0
    chain: OpticalChain | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "outer_loops": self.outer_loops,
            "iterations": dict(self.iterations),
            "initial_objectives": dict(self.initial_objectives),
            "final_objectives": dict(self.final_objectives),
            "initial_qber": self.initial_qber,
            "final_qber": self.final_qber,
            "pulses": self.pulses,
            "evaluations": self.evaluations,
            "elapsed_s": self.elapsed_s,
            "restarts": self.restarts,
        }


DriftFn = Callable[[OpticalChain, float, np.random.Generator], OpticalChain]


class _Bench:
    """Calibration-mode chain plus the clock: every histogram costs pulses and settle time."""

    def __init__(self, chain: OpticalChain, params: CalibrationParams, rng, drift: DriftFn | None):
        self.chain = chain.with_mode(AttenuatorMode.CALIBRATION)
        self.params = params
        self.rng = rng
        self.drift = drift
        self.pulses = 0
        self.evaluations = 0
        self.elapsed = 0.0

    def histogram(self, chain: OpticalChain, pulses_per_cell: int) -> Histogram8:
        h = collect_histogram(chain, pulses_per_cell, self.rng)
        dt = self.params.evaluation_time(pulses_per_cell)
        self.pulses += 8 * pulses_per_cell
        self.evaluations += 1
        self.elapsed += dt
        if self.drift is not None:
            self.chain = self.drift(self.chain, dt, self.rng)
        return h

    def objective(self, name: str, statistic: Callable[[Histogram8], float]):
        def evaluate(pc: PolarizationController) -> float:
            trial = self.chain.with_controller(name, pc)
            return float(statistic(self.histogram(trial, self.params.pulses_per_cell)))

        return evaluate

    def qber(self) -> float:
        return histogram_qber(self.histogram(self.chain, self.params.check_pulses_per_cell))


def _statistics(topology: Topology) -> list[tuple[str, Callable[[Histogram8], float]]]:
    if topology is Topology.THREE_PC:
        return [
            ("pc2", lambda h: pc2_objective(h).value),
            ("pc1", lambda h: pc1_objective(h).value),
            ("pc3", histogram_qber),
        ]
    # one controller: it has to realize the swap and close the phase in one go
    return [("pc2", histogram_qber)]


def _with_controllers(chain: OpticalChain, source: OpticalChain, stats) -> OpticalChain:
    for name, _ in stats:
        chain = chain.with_controller(name, source.controller(name))
    return chain


def calibrate_all(
    chain: OpticalChain,
    params: CalibrationParams,
    rng: np.random.Generator,
    drift: DriftFn | None = None,
) -> CalibrationReport:
    """Tune every controller of ``chain`` until the error rate reaches ``params.target_qber``.

    Order is PC2, then PC1, then PC3. ``drift`` advances the channel while
    calibration consumes time. The returned chain is always back in
    key-sharing mode, whatever the outcome.
    """
    bench = _Bench(chain, params, rng, drift)
    stats = _statistics(chain.topology)
    iterations = {name: 0 for name, _ in stats}
    initial: dict[str, float] = {}
    final: dict[str, float] = {}
    converged = False
    outer = 0
    restarts = 0
    attempt_best = stalled_level = math.inf
    stalled = 0
    best_qber, best_chain = math.inf, bench.chain
    qber = initial_qber = math.nan
    try:
        for outer in range(1, params.max_outer + 2):
            qber = bench.qber()
            if outer == 1:
                initial_qber = qber
            if qber < best_qber:
                best_qber, best_chain = qber, bench.chain
            if qber <= params.target_qber:
                converged = True
                break
            if outer > params.max_outer:
                break
            if qber < attempt_best - params.min_improvement:
                attempt_best, stalled = qber, 0
            else:
                stalled += 1
            restart = outer > 1 and qber > params.restart_qber
            if stalled >= params.patience:
                if abs(attempt_best - stalled_level) <= params.min_improvement:
                    break
                stalled_level = attempt_best
                restart = True
            if restart:
                restarts += 1
                attempt_best, stalled = math.inf, 0
                for name, _ in stats:
                    bench.chain = bench.chain.with_controller(name, bench.chain.controller(name).random(rng))
            for name, statistic in stats:
                objective = bench.objective(name, statistic)
                pc = bench.chain.controller(name)
                for _ in range(params.sweeps):
                    for channel in range(3):
                        pc, trace = descend_channel(
                            objective, pc, channel, params, params.learning_rate(name)
                        )
                        iterations[name] += trace.iterations
                        initial.setdefault(name, trace.values[0])
                        final[name] = trace.best_values[-1]
                        bench.chain = bench.chain.with_controller(name, pc)
        outer = min(outer, params.max_outer + 1)
        if not converged and best_qber < qber:
            # keep the controller settings of the best check, not the last one
            bench.chain = _with_controllers(bench.chain, best_chain, stats)
            qber = best_qber
    finally:
        out_chain = bench.chain.with_mode(AttenuatorMode.KEY_SHARING)
    log.debug("calibration: converged=%s qber=%.4f loops=%d", converged, qber, outer)
    return CalibrationReport(
        converged=converged,
        outer_loops=outer,
        iterations=iterations,
        initial_objectives=initial,
        final_objectives=final,
        initial_qber=initial_qber,
        final_qber=qber,
        pulses=bench.pulses,
        evaluations=bench.evaluations,
        elapsed_s=bench.elapsed,
        restarts=restarts,
        chain=out_chain,
    )


class Action(str, enum.Enum):
    CONTINUE = "continue"
    RECALIBRATE = "recalibrate"


@dataclass
class SessionState:
    """Time bookkeeping shared by the session loop and the supervisor."""

    data_time_s: float = 0.0
    calibration_time_s: float = 0.0
    window_qber: float | None = None
    recalibrations: int = 0

    @property
    def elapsed_s(self) -> float:
        return self.data_time_s + self.calibration_time_s

    @property
    def duty_cycle_data(self) -> float:
        total = self.elapsed_s
        return 1.0 if total == 0.0 else self.data_time_s / total


def supervise(state: SessionState, qber_threshold: float) -> Action:
    """Recalibrate as soon as the latest windowed QBER exceeds the threshold."""
    if state.window_qber is not None and state.window_qber > qber_threshold:
        return Action.RECALIBRATE
    return Action.CONTINUE
