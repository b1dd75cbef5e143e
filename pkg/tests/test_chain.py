from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import controller_ref

from pmqkd.chain import (
    ALICE_PHASES,
    BOB_PHASES,
    ModulatorPhases,
    OpticalChain,
    Topology,
    ideal_chain,
    ideal_link_section,
    randomize_controllers,
)
from pmqkd.optics import Attenuator, AttenuatorMode, Detector, FiberChannel, random_unitary

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def random_chain(seed: int, topology=Topology.THREE_PC, **kw) -> OpticalChain:
    rng = np.random.default_rng(seed)
    ch = OpticalChain(
        topology=topology,
        channel=FiberChannel(loss_db=10.0, unitary=random_unitary(rng)),
        pm1=ModulatorPhases(*rng.uniform(0, 2 * math.pi, 2)),
        pm2=ModulatorPhases(*rng.uniform(0, 2 * math.pi, 2)),
        launch_phase=float(rng.uniform(0, 2 * math.pi)),
        analysis_phase=float(rng.uniform(0, 2 * math.pi)),
        **kw,
    )
    return randomize_controllers(ch, rng)


def p_spd1_ref(ch: OpticalChain, a: float, b: float) -> float:
    """Straight-line propagation with reference retarders (three-controller layout)."""
    pm = lambda mp, x: np.diag([np.exp(1j * mp.phi_or), np.exp(1j * (mp.phi_ex + x))])
    v = np.array([1.0, 0.0])
    v = controller_ref(ch.pc1.voltages) @ v
    v = pm(ch.pm1, a) @ v
    v = ch.channel.unitary.m @ v
    v = controller_ref(ch.pc2.voltages) @ v
    v = pm(ch.pm2, b) @ v
    v = controller_ref(ch.pc3.voltages) @ v
    return abs(v[0]) ** 2 / np.sum(np.abs(v) ** 2)


@settings(max_examples=30)
@given(seeds)
def test_spd1_table_matches_reference_propagation(seed):
    ch = random_chain(seed)
    table = ch.spd1_table()
    for i, a in enumerate(ALICE_PHASES):
        for j, b in enumerate(BOB_PHASES):
            assert table[i, j] == pytest.approx(p_spd1_ref(ch, a, b), abs=1e-12)


@pytest.mark.parametrize("topology", list(Topology))
@settings(max_examples=20, deadline=None)
@given(seed=seeds)
def test_ideal_chain_has_no_errors(topology, seed):
    ch = ideal_chain(random_chain(seed, topology))
    assert ch.true_qber() < 1e-12
    assert np.all(ch.extinctions() > 1 - 1e-12)


@settings(max_examples=20)
@given(seeds)
def test_swap_link_makes_statistics_depend_on_phase_difference(seed):
    ch = ideal_chain(random_chain(seed))
    table = ch.spd1_table()
    # P(SPD1) = cos^2((alpha - beta)/2) once the chain closes
    for i, a in enumerate(ALICE_PHASES):
        for j, b in enumerate(BOB_PHASES):
            assert table[i, j] == pytest.approx(math.cos((a - b) / 2) ** 2, abs=1e-12)


@settings(max_examples=20)
@given(seeds)
def test_wrong_basis_is_a_coin_toss_on_ideal_chain(seed):
    table = ideal_chain(random_chain(seed)).spd1_table()
    for a_idx, b_idx in ((0, 1), (2, 1), (1, 0), (3, 0)):
        assert table[a_idx, b_idx] == pytest.approx(0.5, abs=1e-12)


def test_ideal_link_section_requires_split_light():
    ch = random_chain(0, Topology.SPLICE45)
    ideal_link_section(ch)  # fine: the splice splits evenly
    with pytest.raises(ValueError):
        ideal_link_section(OpticalChain(topology=Topology.THREE_PC))  # PC1 at zero keeps light on one axis


def test_passive_topologies_have_fixed_sections():
    for topo in (Topology.FREESPACE_PLATES, Topology.SPLICE45):
        ch = random_chain(1, topo)
        v = ch.launch() @ np.array([1, 0])
        assert np.allclose(np.abs(v) ** 2, [0.5, 0.5])
        w = ch.analysis().conj().T @ np.array([1, 0])
        assert np.allclose(np.abs(w) ** 2, [0.5, 0.5])
        assert topo.tuned_controllers == ("pc2",)
    assert Topology.THREE_PC.tuned_controllers == ("pc1", "pc2", "pc3")


@settings(max_examples=20)
@given(seeds)
def test_outcome_tables_are_distributions(seed):
    ch = random_chain(seed, spd1=Detector(0.1, 1e-3, "SPD1"), spd2=Detector(0.1, 1e-3, "SPD2"))
    t = ch.with_mode(AttenuatorMode.CALIBRATION).outcome_tables()
    assert t.shape == (4, 2, 4)
    assert np.allclose(t.sum(axis=-1), 1.0)
    assert np.all(t >= 0)


def test_intrinsic_error_mixes_ports():
    ch = ideal_chain(random_chain(3))
    mixed = OpticalChain(**{**ch.__dict__, "intrinsic_error": 0.1})
    assert mixed.true_qber() == pytest.approx(0.1, abs=1e-12)
    assert np.allclose(mixed.extinctions(), 0.9)
    with pytest.raises(ValueError):
        OpticalChain(intrinsic_error=0.6)


def test_background_folds_into_dark_counts():
    ch = OpticalChain(channel=FiberChannel(background_rate=1e-5), spd1=Detector(0.1, 2e-6, "SPD1"))
    det = ch.effective_detector(ch.spd1)
    assert det.dark_prob == pytest.approx(1 - (1 - 2e-6) * (1 - 1e-5))
    assert OpticalChain().effective_detector(ch.spd1) is ch.spd1


def test_mu_at_bob_counts_channel_and_receiver_loss():
    ch = OpticalChain(channel=FiberChannel(loss_db=10.0), attenuator=Attenuator(0.1, 20.0))
    assert ch.loss_db == 12.0
    assert ch.mu_at_bob() == pytest.approx(0.1 * 10 ** -1.2)
    assert ch.with_mode(AttenuatorMode.CALIBRATION).mu_at_bob() == pytest.approx(20 * 10 ** -1.2)


def test_port_split_independent_of_losses_and_intensity():
    ch = random_chain(4)
    a = ch.port_table()
    b = ch.with_channel(FiberChannel(loss_db=25.0, unitary=ch.channel.unitary)).with_mode(AttenuatorMode.CALIBRATION)
    assert np.allclose(a, b.port_table(), atol=1e-15)


def test_with_controller_rejects_unknown_name():
    with pytest.raises(KeyError):
        OpticalChain().with_controller("pc4", OpticalChain().pc1)
