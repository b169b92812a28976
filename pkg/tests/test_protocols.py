import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rabireset.hilbert import MEMORY
from rabireset.model import DriveParams, SystemParams, eps_for_abar
from rabireset.protocols import (
    ExperimentSpec,
    ThermalPrep,
    TruncationOverflowError,
    displacement_ks,
    frame_validation,
    mixture_populations,
    mixture_state,
    prepare_fock,
    required_memory_dim,
    run_experiment,
    run_thermal_reset,
    run_vacuum_rabi,
    sample_thermal_displacements,
    sweep_report,
)
from rabireset.tomography import extract_nbar, sample_axes, suggest_max_alpha

TWO_PI = 2 * math.pi
P = SystemParams.device()


def _abar_drive(abar, **kw):
    return DriveParams(eps_m=eps_for_abar(abar, -P.omega_rabi, P.kappa_m), **kw)


def _small_reset(nbar=0.5, n=20, **settings_):
    base = {"hold": 4.0, "hold_step": 1.0, "readout_dim": 3, "free_decay": False}
    base.update(settings_)
    return ExperimentSpec("thermal_reset", P, (DriveParams.from_couplings(P, 0.5, 0.5),),
                          prep=ThermalPrep(nbar, n, 3), settings=base)


# --- thermal preparation --------------------------------------------------------


def test_zero_nbar_gives_zero_displacements():
    assert np.all(sample_thermal_displacements(ThermalPrep(0.0, 50)) == 0)


def test_displacement_mean_large_sample():
    a = sample_thermal_displacements(ThermalPrep(2.0, 100_000, 11))
    assert np.mean(np.abs(a) ** 2) == pytest.approx(2.0, abs=0.02)
    # phases uniform: the first circular moment vanishes
    assert abs(np.mean(np.exp(1j * np.angle(a)))) < 0.01


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_displacement_ks(seed):
    a = sample_thermal_displacements(ThermalPrep(30.0, 1500, seed))
    assert displacement_ks(a, 30.0) < 1.36 / math.sqrt(1500)


def test_sampler_is_seeded():
    a = sample_thermal_displacements(ThermalPrep(3.0, 10, 5))
    b = sample_thermal_displacements(ThermalPrep(3.0, 10, 5))
    c = sample_thermal_displacements(ThermalPrep(3.0, 10, 6))
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_prepared_mixture_thirty_photons():
    a = sample_thermal_displacements(ThermalPrep(30.0, 1500, 0))
    dim = required_memory_dim(a)
    rho = mixture_state(a, dim)
    est = extract_nbar(sample_axes(rho, suggest_max_alpha(rho), 41))
    assert est.nbar == pytest.approx(30.0, rel=0.05)


@given(st.integers(0, 10**6), st.sampled_from([1.0, 3.0, 8.0]))
@settings(max_examples=8, deadline=None)
def test_prepared_mixture_unbiased(seed, nbar):
    n = 1000
    a = sample_thermal_displacements(ThermalPrep(nbar, n, seed))
    pops = mixture_populations(a, required_memory_dim(a))
    rho = np.diag(pops / pops.sum()).astype(complex)
    est = extract_nbar(sample_axes(rho, suggest_max_alpha(rho), 41))
    # |alpha|^2 is exponential, so its standard deviation equals its mean
    assert abs(est.nbar - nbar) <= 3 * nbar / math.sqrt(n)


def test_mixture_populations_are_poisson_average():
    a = np.array([0.0, 1.0, 1j * math.sqrt(2)])
    p = mixture_populations(a, 30)
    assert p[0] == pytest.approx((1 + math.exp(-1) + math.exp(-2)) / 3)
    assert p @ np.arange(30) == pytest.approx(1.0)


# --- thermal reset --------------------------------------------------------------


def test_sector_and_trajectory_methods_agree():
    small = {"nbar": 0.3, "n": 6, "hold": 2.0, "readout_dim": 2}
    a = run_thermal_reset(_small_reset(**small))[0]
    b = run_thermal_reset(_small_reset(method="trajectories", **small))[0]
    assert np.allclose(a.run.nbar_exact, b.run.nbar_exact, atol=1e-7)
    assert np.allclose(a.run.sigma_z_live, b.run.sigma_z_live, atol=1e-7)
    assert a.run.trace_drift < 1e-8 and b.run.trace_drift < 1e-8


def test_reset_cools():
    res = run_thermal_reset(_small_reset(nbar=2.0, n=200, hold=10.0, hold_step=2.0))[0]
    n = res.run.nbar_exact
    assert n[-1] < 0.2 * n[0]
    assert np.allclose(res.nbar_tomo, n, atol=0.02)
    assert set(res.tables()) == {"nbar", "timeline"}


def test_no_coupling_is_free_decay():
    spec = ExperimentSpec("thermal_reset", P, (DriveParams(),), prep=ThermalPrep(1.0, 200, 0),
                          settings={"hold": 20.0, "hold_step": 5.0, "readout_dim": 2})
    res = run_thermal_reset(spec)[0]
    n = res.run.nbar_exact
    elapsed = res.hold_times + 4 * 0.8
    n0 = n[0] * math.exp(P.kappa_m * elapsed[0])
    assert np.allclose(n, n0 * np.exp(-P.kappa_m * elapsed), rtol=1e-6)
    assert res.free_fit.rate == pytest.approx(P.kappa_m, rel=0.01)


def test_truncation_overflow():
    with pytest.raises(TruncationOverflowError):
        run_thermal_reset(_small_reset(nbar=5.0, n=100, memory_dim=6))


def test_sweep_report_orders_points():
    spec = ExperimentSpec(
        "coupling_sweep", P, tuple(DriveParams.from_couplings(P, g, 0.5) for g in (0.5, 0.25)),
        prep=ThermalPrep(2.0, 100, 0), settings={"hold": 12.0, "hold_step": 1.0, "readout_dim": 3, "free_decay": False},
    )
    rep = sweep_report(run_thermal_reset(spec))
    assert list(rep.g_m) == pytest.approx([0.25, 0.5])
    assert rep.peak_g_m in (0.25, 0.5)


# --- Fock reset and vacuum Rabi --------------------------------------------------


def test_fock_prep_closed_system():
    p = P.with_layout(2, 5, 2)
    d = DriveParams.from_couplings(p, 0.5, 0.0)
    m, fid, t_swap, back = prepare_fock(p, d, 1e-10, decoherence=False, return_back=True)
    assert fid > 0.99
    assert back >= 0.99
    assert t_swap == pytest.approx(1.31, abs=0.005)


def test_fock_prep_wrong_duration_detected():
    spec = ExperimentSpec("fock_reset", P, (DriveParams.from_couplings(P, 0.5, 0.5),),
                          settings={"hold": 2.0, "hold_step": 0.5})
    p = P.with_layout(2, 6, 5)
    _, fid, _ = prepare_fock(p, spec.drives[0], 1e-8, duration=2 * 1.31)
    assert fid < 0.5


def test_vacuum_rabi_examples():
    spec = ExperimentSpec("vacuum_rabi", P, (_abar_drive(0.0), _abar_drive(1.0), _abar_drive(2.0)),
                          settings={"decoherence": False})
    flat, one, two = run_vacuum_rabi(spec)
    assert np.allclose(flat.population, 1.0)
    assert one.fit.frequency == pytest.approx(2 * P.chi_m, rel=1e-4)
    assert one.fit.period / two.fit.period == pytest.approx(2.0, rel=1e-4)
    g = DriveParams.from_couplings(P, 0.5, 0.0)
    r = run_vacuum_rabi(ExperimentSpec("vacuum_rabi", P, (g,), settings={"decoherence": False}))[0]
    assert r.fit.period == pytest.approx(2.62, abs=0.01)


# --- frame validation -----------------------------------------------------------


def test_frame_validation_trivial_at_zero_amplitude():
    res = frame_validation(P, 0.0, 400.0, memory_dim=4, n_times=5)
    assert res.min_fidelity > 1 - 1e-8


def test_frame_validation_degrades_at_low_ratio():
    good = frame_validation(P, 1.0, 400.0, memory_dim=12, n_times=5)
    bad = frame_validation(P, 1.0, 10.0, memory_dim=12, n_times=5)
    assert good.min_fidelity > 0.99 > bad.min_fidelity


# --- specs and reproducibility --------------------------------------------------


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec("nope", P, (DriveParams(),))
    with pytest.raises(ValueError):
        ExperimentSpec("vacuum_rabi", P, ())
    with pytest.raises(ValueError):
        ExperimentSpec("thermal_reset", P, (DriveParams(),))
    with pytest.raises(ValueError):
        ExperimentSpec("vacuum_rabi", P, (DriveParams(),), settings={"bogus": 1})
    with pytest.raises(ValueError):
        ExperimentSpec("vacuum_rabi", P, (DriveParams(),), tol=0.0)
    with pytest.raises(ValueError):
        ThermalPrep(-1.0)


def test_runs_are_reproducible():
    spec = _small_reset(nbar=1.0, n=30)
    a, b = run_experiment(spec)[0], run_experiment(spec)[0]
    for name, table in a.tables().items():
        assert table.rows == b.tables()[name].rows
    assert a.summary() == b.summary()


def test_parallel_matches_serial():
    spec = ExperimentSpec("vacuum_rabi", P, (_abar_drive(0.5), _abar_drive(1.0)), settings={"n_times": 61})
    serial = run_experiment(spec, 1)
    parallel = run_experiment(spec, 2)
    for s, q in zip(serial, parallel):
        assert np.array_equal(s.population, q.population)
