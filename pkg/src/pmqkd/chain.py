"""The full optical chain: laser -> PC1 -> PM1 -> VOA -> channel -> PC2 -> PM2 -> PC3 -> PBS -> SPDs.

Alice's modulator applies one of four shifts, Bob's one of two; with the
component swap between the modulators the detection statistics depend only
on the difference of the two shifts.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import jones
from .jones import JonesMatrix
from .optics import (
    Attenuator,
    AttenuatorMode,
    Detector,
    FiberChannel,
    PolarizationController,
    click_probability,
    half_wave_plate,
    pc_matrix,
    solve_voltages,
    splice_matrix,
)

ALICE_PHASES = (0.0, math.pi / 2.0, math.pi, 3.0 * math.pi / 2.0)
BOB_PHASES = (0.0, math.pi / 2.0)

# Bob's bit is 0 on SPD1 and 1 on SPD2.
LASER_STATE = np.array([1.0, 0.0], dtype=complex)


class Topology(str, enum.Enum):
    THREE_PC = "three_pc"
    FREESPACE_PLATES = "freespace_plates"
    SPLICE45 = "splice45"

    @property
    def tuned_controllers(self) -> tuple[str, ...]:
        return ("pc1", "pc2", "pc3") if self is Topology.THREE_PC else ("pc2",)


@dataclass(frozen=True)
class ModulatorPhases:
    """Zero-voltage phases (phi_or, phi_ex) of one modulator."""

    phi_or: float = 0.0
    phi_ex: float = 0.0

    def matrix(self, shift: float) -> np.ndarray:
        return np.diag([np.exp(1j * self.phi_or), np.exp(1j * (self.phi_ex + shift))])


@dataclass(frozen=True, eq=False)
class OpticalChain:
    topology: Topology = Topology.THREE_PC
    pc1: PolarizationController = field(default_factory=PolarizationController)
    pc2: PolarizationController = field(default_factory=PolarizationController)
    pc3: PolarizationController = field(default_factory=PolarizationController)
    channel: FiberChannel = field(default_factory=FiberChannel)
    attenuator: Attenuator = field(default_factory=Attenuator)
    spd1: Detector = field(default_factory=lambda: Detector(label="SPD1"))
    spd2: Detector = field(default_factory=lambda: Detector(label="SPD2"))
    bob_loss_db: float = 2.0
    pm1: ModulatorPhases = field(default_factory=ModulatorPhases)
    pm2: ModulatorPhases = field(default_factory=ModulatorPhases)
    # PMF birefringent phases of the passive launch/analysis sections
    launch_phase: float = 0.0
    analysis_phase: float = 0.0
    # per-pulse probability that the photon leaves through the wrong port
    intrinsic_error: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "topology", Topology(self.topology))
        if self.bob_loss_db < 0:
            raise ValueError("bob_loss_db must be >= 0")
        if not 0.0 <= self.intrinsic_error <= 0.5:
            raise ValueError("intrinsic_error must be in [0, 0.5]")

    # --- structure -----------------------------------------------------------

    def controller(self, name: str) -> PolarizationController:
        return getattr(self, name)

    def with_controller(self, name: str, pc: PolarizationController) -> OpticalChain:
        if name not in ("pc1", "pc2", "pc3"):
            raise KeyError(name)
        return replace(self, **{name: pc})

    def with_mode(self, mode: AttenuatorMode) -> OpticalChain:
        return replace(self, attenuator=self.attenuator.with_mode(mode))

    def with_channel(self, channel: FiberChannel) -> OpticalChain:
        return replace(self, channel=channel)

    def launch(self) -> np.ndarray:
        if self.topology is Topology.THREE_PC:
            return pc_matrix(self.pc1).m
        p = np.diag([1.0, np.exp(1j * self.launch_phase)])
        if self.topology is Topology.FREESPACE_PLATES:
            return p @ half_wave_plate(math.pi / 8.0).m
        return p @ splice_matrix(math.pi / 4.0).m

    def link(self) -> np.ndarray:
        return pc_matrix(self.pc2).m @ self.channel.unitary.m

    def analysis(self) -> np.ndarray:
        if self.topology is Topology.THREE_PC:
            return pc_matrix(self.pc3).m
        p = np.diag([1.0, np.exp(1j * self.analysis_phase)])
        if self.topology is Topology.FREESPACE_PLATES:
            return half_wave_plate(math.pi / 8.0).m @ p
        return splice_matrix(-math.pi / 4.0).m @ p

    def sections(self) -> tuple[JonesMatrix, JonesMatrix, JonesMatrix]:
        """Effective (launch, link, analysis) section transforms, modulators excluded."""
        return JonesMatrix(self.launch()), JonesMatrix(self.link()), JonesMatrix(self.analysis())

    def output_matrix(self, alice_phase: float, bob_phase: float) -> np.ndarray:
        return (
            self.analysis()
            @ self.pm2.matrix(bob_phase)
            @ self.link()
            @ self.pm1.matrix(alice_phase)
            @ self.launch()
        )

    # --- photon statistics -----------------------------------------------------

    @property
    def loss_db(self) -> float:
        return self.channel.loss_db + self.bob_loss_db

    def mu_at_bob(self) -> float:
        return self.attenuator.mu * 10.0 ** (-self.loss_db / 10.0)

    def spd1_table(self) -> np.ndarray:
        """P(SPD1) for every (alice phase, bob phase) cell, shape (4, 2), without intrinsic error."""
        s1 = self.launch() @ LASER_STATE
        s2 = self.link()
        s3 = self.analysis()
        out = np.empty((len(ALICE_PHASES), len(BOB_PHASES)))
        for j, b in enumerate(BOB_PHASES):
            back = s3 @ self.pm2.matrix(b) @ s2
            for i, a in enumerate(ALICE_PHASES):
                v = back @ (self.pm1.matrix(a) @ s1)
                n = abs(v[0]) ** 2 + abs(v[1]) ** 2
                out[i, j] = abs(v[0]) ** 2 / n
        return out

    def port_table(self) -> np.ndarray:
        """P(SPD1) per cell including the intrinsic wrong-port probability."""
        p1 = self.spd1_table()
        e = self.intrinsic_error
        return (1.0 - e) * p1 + e * (1.0 - p1)

    def effective_detector(self, det: Detector) -> Detector:
        """Detector with the channel background folded into its dark-count probability."""
        bg = self.channel.background_rate
        if bg == 0.0:
            return det
        return replace(det, dark_prob=1.0 - (1.0 - det.dark_prob) * (1.0 - bg))

    def click_tables(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-cell click probabilities (c1, c2) of the two detectors, each shape (4, 2)."""
        p1 = self.port_table()
        mu = self.mu_at_bob()
        c1 = click_probability(mu * p1, self.effective_detector(self.spd1))
        c2 = click_probability(mu * (1.0 - p1), self.effective_detector(self.spd2))
        return np.asarray(c1), np.asarray(c2)

    def outcome_tables(self) -> np.ndarray:
        """Per-cell probabilities of (no click, SPD1 only, SPD2 only, both), shape (4, 2, 4)."""
        c1, c2 = self.click_tables()
        return np.stack(
            [(1 - c1) * (1 - c2), c1 * (1 - c2), (1 - c1) * c2, c1 * c2], axis=-1
        )

    def true_qber(self) -> float:
        """Matched-basis error probability of the optics alone (no dark counts)."""
        p1 = self.port_table()
        return float((1 - p1[0, 0] + p1[2, 0] + 1 - p1[1, 1] + p1[3, 1]) / 4.0)

    def extinctions(self) -> np.ndarray:
        """Fraction of light reaching the intended detector for the four matched-basis states."""
        p1 = self.port_table()
        return np.array([p1[0, 0], 1 - p1[2, 0], p1[1, 1], 1 - p1[3, 1]])


def ideal_link_section(chain: OpticalChain) -> np.ndarray:
    """Swap-type link transform that closes the chain for the current launch/analysis sections."""
    v = chain.pm1.matrix(0.0) @ chain.launch() @ LASER_STATE
    w = chain.pm2.matrix(0.0).conj().T @ chain.analysis().conj().T @ LASER_STATE
    if min(abs(v[0]), abs(v[1]), abs(w[0]), abs(w[1])) < 1e-9:
        raise ValueError("launch/analysis sections do not split light onto both crystal axes")
    ratio = (w[0] * v[0]) / (w[1] * v[1])
    b = float(np.angle(ratio))
    return jones.swap_section(b).m


def ideal_chain(chain: OpticalChain) -> OpticalChain:
    """Chain with every tunable controller set to the analytic optimum."""
    out = chain
    if chain.topology is Topology.THREE_PC:
        out = out.with_controller("pc1", solve_voltages(chain.pc1, jones.launch_section(0.0)))
        pc2_target = jones.SWAP.m @ chain.channel.unitary.m.conj().T
        out = out.with_controller("pc2", solve_voltages(chain.pc2, JonesMatrix(pc2_target)))
        before = out.pm2.matrix(0.0) @ out.link() @ out.pm1.matrix(0.0) @ out.launch()
        out = out.with_controller("pc3", solve_voltages(chain.pc3, JonesMatrix(before.conj().T)))
        return out
    target = ideal_link_section(chain) @ chain.channel.unitary.m.conj().T
    return out.with_controller("pc2", solve_voltages(chain.pc2, JonesMatrix(target)))


def randomize_controllers(chain: OpticalChain, rng: np.random.Generator) -> OpticalChain:
    out = chain
    for name in chain.topology.tuned_controllers:
        out = out.with_controller(name, chain.controller(name).random(rng))
    return out
