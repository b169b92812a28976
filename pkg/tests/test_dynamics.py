import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rabireset.dynamics import (
    ChargeSectors,
    CollapseSet,
    Liouvillian,
    SectorLeakError,
    StiffnessError,
    collapse_operators,
    effective_collapse_operators,
    evolve,
    integrate,
    sequence_gates,
    sequence_hamiltonian,
)
from rabireset.hilbert import MEMORY, DensityMatrix, SpaceLayout, annihilation, coherent_state, default_layout, fidelity, fock_state, number, pauli, product_state, pure_state, thermal_state
from rabireset.model import DriveParams, FrameTag, Hamiltonian, SystemParams, dispersive_hamiltonian, effective_jc_hamiltonian, half_pi_gate
from rabireset.pulses import DEFAULT_RAMP, PulseSequence, Segment, hold_sequence, ramp_envelope, rdr_sequence


def _zero(layout):
    from rabireset.hilbert import Operator

    return Hamiltonian(FrameTag.EFFECTIVE_JC, ((Operator(layout, np.zeros((layout.total,) * 2), "effective-jc"), None),))


# --- collapse operators ---------------------------------------------------------


def test_dephasing_rate_examples():
    p = SystemParams.device()
    assert p.gamma_phi == pytest.approx(1 / 20 - 1 / 50)
    assert p.kappa_m == pytest.approx(5.88e-3, abs=5e-6)
    flat = SystemParams.device(t2_echo_q=50.0)
    assert flat.gamma_phi == 0
    rates = dict((i, r) for i, (_, r) in enumerate(collapse_operators(flat.with_layout(2, 3, 2))))
    assert rates[len(rates) - 1] == 0


def test_collapse_set_contents():
    p = SystemParams.device(default_layout(2, 3, 2))
    cs = collapse_operators(p)
    rates = sorted(r for _, r in cs)
    assert np.allclose(rates, sorted([p.kappa_m, p.kappa_r, 1 / p.t1_q, p.gamma_phi / 2]))
    eff = effective_collapse_operators(p)
    assert sum(r for _, r in list(eff)[2:]) == pytest.approx(3 / (4 * p.t1_q) + p.gamma_phi)
    with pytest.raises(ValueError):
        CollapseSet(((pauli("z"), -1.0),))


def test_bath_occupation_adds_heating_channels():
    p = SystemParams.device(default_layout(2, 3, 2), bath_occupation=0.05)
    assert len(collapse_operators(p)) == 6


# --- evolve oracles -------------------------------------------------------------


def test_coherent_decay_oracle():
    lay = SpaceLayout((25,))
    kappa = 0.7
    a = annihilation(25).with_frame("effective-jc")
    traj = evolve(coherent_state(1.8, 25), _zero(lay), CollapseSet(((a, kappa),)), np.linspace(0, 3, 31), 1e-10,
                  observables={"n": number(25)})
    assert np.allclose(traj["n"], 1.8**2 * np.exp(-kappa * traj.times), atol=1e-8)
    assert np.abs(traj["trace"] - 1).max() < 1e-8


def test_t1_oracle():
    lay = SpaceLayout((2,))
    t1 = 25.0
    traj = evolve(fock_state(1, 2), _zero(lay), CollapseSet(((pauli("minus").with_frame("effective-jc"), 1 / t1),)),
                  np.linspace(0, 60, 13), 1e-10, observables={"z": pauli("z")})
    assert np.allclose(traj["z"], 2 * np.exp(-traj.times / t1) - 1, atol=1e-8)


def test_closed_system_purity_constant():
    p = SystemParams.device(default_layout(2, 5, 3))
    rho = product_state(pure_state(np.array([0.6, 0.8])), coherent_state(0.4, 5), fock_state(0, 3),
                        labels=p.layout.labels)
    traj = evolve(rho, effective_jc_hamiltonian(p, 3.0, 1.0), CollapseSet.empty(), (0.0, 4.0), 1e-10)
    assert np.abs(traj["purity"] - traj["purity"][0]).max() < 1e-8
    assert np.abs(traj["trace"] - 1).max() < 1e-8


@given(st.integers(0, 10**6))
@settings(max_examples=10, deadline=None)
def test_collapse_only_runs_contract_purity(seed):
    rng = np.random.default_rng(seed)
    lay = SpaceLayout((2, 3))
    g = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    m = g @ g.conj().T
    rho = DensityMatrix(lay, m / np.trace(m))
    p = SystemParams.device()
    from rabireset.hilbert import embed

    # Hermitian collapse operators give a unital map, which cannot raise purity
    ch = (
        (embed(number(3), lay, 1).with_frame("effective-jc"), float(rng.uniform(0.1, 2))),
        (embed(pauli("z"), lay, 0).with_frame("effective-jc"), p.gamma_phi),
        (embed(pauli("x"), lay, 0).with_frame("effective-jc"), float(rng.uniform(0.0, 1))),
    )
    traj = evolve(rho, _zero(lay), CollapseSet(ch), np.linspace(0, 3, 16), 1e-9)
    assert np.all(np.diff(traj["purity"]) <= 1e-10)
    assert np.abs(traj["trace"] - 1).max() < 1e-8


def test_stiffness_error_names_segment():
    lay = SpaceLayout((2,))
    h = Hamiltonian(FrameTag.EFFECTIVE_JC, ((pauli("x").with_frame("effective-jc"), lambda t: math.nan if t > 0.5 else 0.0),))
    seq = PulseSequence((Segment("calm", 0.1, {}), Segment("wild", 1.0, {})))
    liou = Liouvillian.build(h, CollapseSet.empty())
    with pytest.raises(StiffnessError, match="wild"):
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            integrate(liou, liou.pack(fock_state(0, 2)), [0.0, 1.1], 1e-12, breakpoints=seq.breakpoints(),
                      segment_name=seq.segment_at)


def test_bad_tol_rejected():
    lay = SpaceLayout((2,))
    with pytest.raises(ValueError):
        evolve(fock_state(0, 2), _zero(lay), CollapseSet.empty(), (0, 1), tol=0)


# --- pulses ---------------------------------------------------------------------


def test_ramp_examples():
    for kind in ("cosine", "linear"):
        up = ramp_envelope(kind, 0.8)
        assert up(0) == 0 and up(0.8) == pytest.approx(1)
        down = ramp_envelope(kind, 0.8, "down")
        assert down(0) == 1 and down(0.8) == pytest.approx(0)
    assert ramp_envelope("cosine", 0.8)(0.4) == pytest.approx(0.5)
    lin = ramp_envelope("linear", 0.8)
    s = np.linspace(0.05, 0.75, 8)
    assert np.allclose(np.diff([lin(x) for x in s]) / np.diff(s), 1 / 0.8)
    cos = ramp_envelope("cosine", 0.8)
    h = 1e-6
    assert abs(cos(h) - cos(0)) / h < 1e-4  # flat at both ends
    assert abs(cos(0.8) - cos(0.8 - h)) / h < 1e-4
    with pytest.raises(ValueError):
        ramp_envelope("cosine", 0)
    with pytest.raises(ValueError):
        ramp_envelope("gauss", 1.0)


@given(st.floats(0.01, 5.0), st.sampled_from(["cosine", "linear"]))
def test_ramps_monotone(duration, kind):
    up = ramp_envelope(kind, duration)
    v = [up(x) for x in np.linspace(-0.1, duration + 0.1, 50)]
    assert np.all(np.diff(v) >= -1e-15)
    assert 0 <= min(v) and max(v) <= 1


def test_rdr_sequence_structure():
    seq = rdr_sequence(hold_duration=0.0)
    assert seq.total_duration == pytest.approx(4 * DEFAULT_RAMP) and seq.total_duration == pytest.approx(3.2)
    names = [s.name for s in rdr_sequence(hold_duration=5.0).segments]
    assert names == ["sidebands_up", "rabi_up", "hold", "rabi_down", "half_pi", "sidebands_down"]
    seq = rdr_sequence(hold_duration=5.0)
    assert seq.total_duration == pytest.approx(8.2)
    rabi, sb = seq.envelope("rabi"), seq.envelope("sideband_m")
    assert rabi(0.4) == 0 and sb(0.4) == pytest.approx(0.5)
    assert rabi(3.0) == 1 and sb(3.0) == 1
    assert rabi(7.4) == pytest.approx(0, abs=1e-12) and sb(7.8) == pytest.approx(0.5)
    assert seq.gate_times() == [(pytest.approx(7.4), "half_pi")]
    gates = sequence_gates(seq)
    assert np.allclose(gates[0][1], half_pi_gate())
    assert seq.segment_at(3.0) == "hold"
    with pytest.raises(ValueError):
        rdr_sequence(hold_duration=-1)
    with pytest.raises(ValueError):
        Segment("x", 0.0, {})
    with pytest.raises(ValueError):
        Segment("x", 1.0, {"laser": "on"})


def test_envelopes_continuous_within_segments():
    seq = rdr_sequence(hold_duration=1.0)
    for ch in ("rabi", "sideband_m", "sideband_r"):
        env = seq.envelope(ch)
        t = np.linspace(0, seq.total_duration, 4001)
        v = np.array([env(x) for x in t])
        assert np.abs(np.diff(v)).max() < 0.01


def test_shifted_sequence():
    seq = rdr_sequence(hold_duration=2.0)
    assert seq.shifted(0).total_duration == pytest.approx(3.2)
    assert seq.shifted(10).total_duration == pytest.approx(13.2)


# --- sequences ------------------------------------------------------------------


def test_zero_amplitude_sequence_is_free_decay():
    p = SystemParams.device(default_layout(2, 6, 3))
    drives = DriveParams(eps_m=0, eps_r=0, rabi=0.0)
    seq = rdr_sequence(hold_duration=1.0)
    rho = product_state(pure_state(np.array([0.8, 0.6])), thermal_state(0.5, 6), fock_state(0, 3),
                        labels=p.layout.labels)
    cs = collapse_operators(p, FrameTag.ROTATING_LAB)
    h_seq = sequence_hamiltonian(p, drives, seq, FrameTag.ROTATING_LAB)
    a = evolve(rho, h_seq, cs, (0.0, seq.total_duration), 1e-10, store_states=True, sequence=seq)
    b = evolve(rho, dispersive_hamiltonian(p).with_frame("rotating-lab"), cs, (0.0, seq.total_duration), 1e-10,
               store_states=True)
    assert fidelity(a.states[-1], b.states[-1]) >= 1 - 1e-8


def test_gate_is_applied_in_full_runs():
    lay = SpaceLayout((2,))
    seq = PulseSequence((Segment("a", 0.5, {}), Segment("half_pi", 0.0, gate="half_pi"), Segment("b", 0.5, {})))
    plus = pure_state(np.array([1.0, 1.0]) / math.sqrt(2))
    traj = evolve(plus, _zero(lay), CollapseSet.empty(), np.linspace(0, 1, 5), 1e-10, gates=sequence_gates(seq),
                  observables={"z": pauli("z")})
    assert traj["z"][0] == pytest.approx(0, abs=1e-12)
    assert traj["z"][-1] == pytest.approx(1, abs=1e-10)


# --- charge sectors -------------------------------------------------------------


def test_sector_and_full_runs_agree():
    p = SystemParams.device(default_layout(2, 5, 3))
    lay = p.layout
    sec = ChargeSectors.excitation_number(lay)
    qubit = np.diag([0.5, 0.5]).astype(complex)
    rho = DensityMatrix(lay, np.kron(np.kron(qubit, thermal_state(0.8, 5).matrix), fock_state(0, 3).matrix))
    h = effective_jc_hamiltonian(p, 4.0, 1.5)
    cs = effective_collapse_operators(p)
    times = np.linspace(0, 3, 7)
    full = evolve(rho, h, cs, times, 1e-10)
    packed = evolve(rho, h, cs, times, 1e-10, sectors=sec)
    for k in ("nbar_m", "nbar_r", "sigma_z", "trace"):
        assert np.allclose(full[k], packed[k], atol=1e-9)
    assert sec.size < lay.total**2
    vec = sec.pack_product(qubit, thermal_state(0.8, 5), fock_state(0, 3))
    assert np.allclose(vec, sec.pack(rho))


def test_sectors_reject_coherences():
    lay = default_layout(2, 3, 2)
    sec = ChargeSectors.excitation_number(lay)
    with pytest.raises(SectorLeakError):
        sec.pack_product(pure_state(np.array([0.6, 0.8])), fock_state(0, 3), fock_state(0, 2))
    with pytest.raises(SectorLeakError):
        sec.pack(product_state(pure_state(np.array([0.6, 0.8])), fock_state(0, 3), fock_state(0, 2),
                               labels=lay.labels))
    with pytest.raises(ValueError):
        evolve(sec.pack_product(np.eye(2) / 2, fock_state(0, 3), fock_state(0, 2)),
               _zero(lay), CollapseSet.empty(), (0, 1), sectors=sec, gates=[(0.5, half_pi_gate())])


def test_sector_reduced_state_matches_partial_trace():
    lay = default_layout(2, 4, 2)
    sec = ChargeSectors.excitation_number(lay)
    th = thermal_state(0.6, 4)
    rho = DensityMatrix(lay, np.kron(np.kron(np.diag([0.3, 0.7]), th.matrix), fock_state(0, 2).matrix))
    assert np.allclose(sec.reduced(sec.pack(rho), MEMORY), th.matrix)


def test_determinism():
    p = SystemParams.device(default_layout(2, 4, 2))
    rho = product_state(fock_state(1, 2), fock_state(1, 4), fock_state(0, 2), labels=p.layout.labels)
    h = effective_jc_hamiltonian(p, 2.0, 0.5)
    cs = effective_collapse_operators(p)
    a = evolve(rho, h, cs, (0, 2), 1e-9)
    b = evolve(rho, h, cs, (0, 2), 1e-9)
    for k in a.observables:
        assert np.array_equal(a[k], b[k])


def test_hold_sequence_channels():
    seq = hold_sequence(2.0, ("rabi",))
    assert seq.envelope("rabi")(1.0) == 1 and seq.envelope("sideband_m")(1.0) == 0
