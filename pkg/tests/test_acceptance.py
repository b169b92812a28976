"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line (visible with ``pytest -v``) before
asserting.  The heavy simulations are module fixtures shared between the
criteria that read them.
"""

import math
import time
import warnings

import numpy as np
import pytest

from rabireset import cli
from rabireset.analysis import fit_piecewise_decay, piecewise_model, shifted_rabi_frequency
from rabireset.hilbert import DensityMatrix, SpaceLayout, fidelity, thermal_state
from rabireset.model import DriveParams, SystemParams, eps_for_abar
from rabireset.protocols import (
    ExperimentSpec,
    ThermalPrep,
    frame_validation,
    run_driven_ramsey,
    run_fock_reset,
    run_thermal_reset,
    run_vacuum_rabi,
    steady_state,
    sweep_report,
)
from rabireset.tomography import curvature_at_origin, extract_nbar, nbar_from_curvature, thermal_samples

pytestmark = pytest.mark.slow

P = SystemParams.device()
KAPPA = P.kappa
SWEEP_G = (0.125, 0.25, 0.5, 0.75, 1.0)
TIMES: dict[str, float] = {}


def report(capsys, n: int, ok: bool, detail: str):
    with capsys.disabled():
        print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")


def _timed(name, fn, *args, **kw):
    t = time.perf_counter()
    out = fn(*args, **kw)
    TIMES[name] = time.perf_counter() - t
    return out


def _abar_drive(abar):
    return DriveParams(eps_m=eps_for_abar(abar, -P.omega_rabi, P.kappa_m))


def _memory(m):
    return DensityMatrix(SpaceLayout((m.shape[0],)), m, check=False)


# --- shared runs ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def frame():
    return _timed("frame", frame_validation, P, 1.0, 400.0, memory_dim=20, n_times=41)


@pytest.fixture(scope="module")
def vacuum_rabi():
    spec = ExperimentSpec("vacuum_rabi", P, tuple(_abar_drive(a) for a in (0.5, 1.0, 2.0)))
    return _timed("vacuum_rabi", run_vacuum_rabi, spec)


def _fock_spec(tol=1e-8):
    return ExperimentSpec("fock_reset", P, (DriveParams.from_couplings(P, 0.5, 0.5),), tol=tol)


@pytest.fixture(scope="module")
def fock():
    return _timed("fock", run_fock_reset, _fock_spec())


@pytest.fixture(scope="module")
def sweep():
    spec = ExperimentSpec(
        "coupling_sweep", P, tuple(DriveParams.from_couplings(P, g, 0.5) for g in SWEEP_G),
        prep=ThermalPrep(30.0, 1500, 0), settings={"free_decay": False},
    )
    return _timed("sweep", run_thermal_reset, spec)


@pytest.fixture(scope="module")
def reset30():
    spec = ExperimentSpec("thermal_reset", P, (DriveParams.from_couplings(P, 0.5, 1.0),),
                          prep=ThermalPrep(30.0, 1500, 0))
    return _timed("reset30", run_thermal_reset, spec)[0]


@pytest.fixture(scope="module")
def warm_steady():
    p = SystemParams.device(bath_occupation=0.045)
    return _timed("steady", steady_state, p, DriveParams.from_couplings(p, 0.5, 1.0))


# --- criteria ---------------------------------------------------------------------------


def test_criterion_1_effective_model_emergence(frame, capsys):
    ok = frame.min_fidelity >= 0.99 and TIMES["frame"] < 60
    report(capsys, 1, ok, f"min fidelity {frame.min_fidelity:.6f} over one swap (>= 0.99), "
                          f"ratio 400, abar 1, {TIMES['frame']:.1f} s (< 60 s)")
    assert frame.min_fidelity >= 0.99
    assert TIMES["frame"] < 60


def test_criterion_2_vacuum_rabi_frequency(vacuum_rabi, capsys):
    errs = [r.summary()["relative_error"] for r in vacuum_rabi]
    ok = max(errs) < 0.03 and TIMES["vacuum_rabi"] < 30
    report(capsys, 2, ok, "relative errors " + ", ".join(f"{e:.2%}" for e in errs)
           + f" at abar 0.5/1/2 (< 3%), {TIMES['vacuum_rabi']:.1f} s (< 30 s)")
    assert max(errs) < 0.03
    assert TIMES["vacuum_rabi"] < 30


def test_criterion_3_single_photon_reset(fock, capsys):
    tau = fock.time_constant
    ratio = (1 / P.kappa_m) / tau
    ok = 0.6 <= tau <= 2.4 and ratio > 70
    report(capsys, 3, ok, f"tau {tau:.3f} us (in [0.6, 2.4]), 170 us / tau = {ratio:.1f} (> 70)")
    assert 0.6 <= tau <= 2.4
    assert ratio > 70


def test_criterion_4_cooling_rate_bound(sweep, capsys):
    rep = sweep_report(sweep)
    rate = float(rep.max_rate[list(rep.g_m).index(0.5)])
    in_bound = KAPPA / 6 <= rate <= KAPPA / 2
    in_band = KAPPA / 4.5 <= rate <= KAPPA / 2.5
    peak_ok = rep.peak_g_m <= 0.5
    if not in_band:
        warnings.warn(f"max rate {rate:.3f}/us outside the measured band [kappa/4.5, kappa/2.5]")
    rates = ", ".join(f"{g:g}:{r:.3f}" for g, r in zip(rep.g_m, rep.max_rate))
    report(capsys, 4, in_bound and peak_ok,
           f"max rate {rate:.3f} photons/us = kappa/{KAPPA / rate:.2f} (bound [kappa/6, kappa/2]; "
           f"measured band {'inside' if in_band else 'outside, warning only'}); sweep {rates}; "
           f"peak at g_m = {rep.peak_g_m:g} kappa (<= 0.5)")
    assert in_bound
    assert peak_ok


def test_criterion_5_thermal_reset(reset30, warm_steady, capsys):
    t_cold = reset30.time_below(0.1)
    est = warm_steady.estimate
    runtime = TIMES["reset30"] + TIMES["steady"]
    ok = t_cold <= 80 and abs(est.nbar - 0.045) <= 0.025 and runtime < 1200
    report(capsys, 5, ok, f"nbar0 {reset30.nbar_initial:.2f} reaches 0.1 after {t_cold:.1f} us of hold (<= 80); "
                          f"n_inf {est.nbar:.4f} with bath occupation 0.045 (0.045 +- 0.025); {runtime:.0f} s (< 1200 s)")
    assert t_cold <= 80
    assert abs(est.nbar - 0.045) <= 0.025
    assert runtime < 1200


def test_criterion_6_tomography_oracle(capsys):
    worst_rel, worst_abs, worst_curv = 0.0, 0.0, 0.0
    for nbar in (0.0, 0.5, 1.0, 2.0, 5.0):
        est = extract_nbar(thermal_samples(nbar, math.sqrt(math.log(2) / (nbar + 0.5)), 41))
        if nbar:
            worst_rel = max(worst_rel, abs(est.nbar - nbar) / nbar)
        else:
            worst_abs = abs(est.nbar)
        c = curvature_at_origin(thermal_state(nbar, 200))
        worst_curv = max(worst_curv, abs(c + nbar + 0.5), abs(nbar_from_curvature(c, c) - nbar))
    ok = worst_rel <= 0.02 and worst_abs <= 0.02 and worst_curv <= 1e-9
    report(capsys, 6, ok, f"worst relative error {worst_rel:.2e} (<= 2%), |nbar| at vacuum {worst_abs:.1e}; "
                          f"curvature identity error {worst_curv:.1e} (<= 1e-9)")
    assert worst_rel <= 0.02 and worst_abs <= 0.02
    assert worst_curv <= 1e-9


def test_criterion_7_calibration(capsys):
    res = run_driven_ramsey(ExperimentSpec("driven_ramsey", P, (DriveParams.from_couplings(P, 0.5, 0.0),)))
    omega = shifted_rabi_frequency(2 * math.pi * 9.0, 2 * math.pi * 2.6) / (2 * math.pi)
    four = float(f"{omega:.4g}")
    ok = res.scale_error < 0.03 and four == 9.368
    report(capsys, 7, ok, f"scale error {res.scale_error:.2e} (< 3%); shifted Rabi {omega:.5f} MHz -> {four} (9.368)")
    assert res.scale_error < 0.03
    assert four == 9.368


def test_criterion_8_piecewise_fit(capsys):
    planted = np.array([0.05, 5.0, 0.2, 10.0])
    t = np.linspace(0, 40, 81)
    y = piecewise_model(t, *planted)
    clean = fit_piecewise_decay(t, y)
    noisy_y = y * (1 + 0.01 * np.random.default_rng(0).standard_normal(y.size))
    noisy = fit_piecewise_decay(t, noisy_y, weights=1 / np.abs(noisy_y))
    dense = np.linspace(0, 40, 2001)
    clean_err = float(np.abs(clean.params - planted).max())
    sigmas = np.abs(noisy.params - planted) / noisy.stderr
    mono = bool(np.all(np.diff(clean(dense)) <= 0) and np.all(np.diff(noisy(dense)) <= 0))
    ok = clean_err < 1e-6 and np.all(sigmas <= 2) and mono
    report(capsys, 8, ok, f"noiseless error {clean_err:.1e} (< 1e-6); 1% noise deviations "
                          + ", ".join(f"{s:.2f}" for s in sigmas) + f" sigma (<= 2); monotone {mono}")
    assert clean_err < 1e-6
    assert np.all(sigmas <= 2)
    assert mono


RESET_YAML = """
experiment: thermal_reset
seed: 11
drives: {abar_m_over_kappa_chi: 0.5, abar_r_over_kappa_chi: 1.0}
prep: {nbar: 2.0, n_samples: 200}
settings: {hold_s: 1.0e-5, hold_step_s: 1.0e-6, readout_dim: 3}
"""
CLI_CONFIGS = {
    "reset": RESET_YAML,
    "fock": "experiment: fock_reset\ndrives: {abar_m_over_kappa_chi: 0.5, abar_r_over_kappa_chi: 0.5}\n",
    "rabi": "experiment: vacuum_rabi\ndrives: {abar_m_over_kappa_chi: [0.25, 0.5]}\n",
}


def _csv_bytes(tmp_path, tag):
    out = {}
    for name, text in CLI_CONFIGS.items():
        cfg = tmp_path / f"{name}.yaml"
        cfg.write_text(text)
        target = tmp_path / f"{name}_{tag}"
        assert cli.main(["simulate", "--config", str(cfg), "--out", str(target), "--no-plots"]) == 0
        out.update({f"{name}/{p.name}": p.read_bytes() for p in sorted(target.glob("*.csv"))})
    return out


def test_criterion_9_infrastructure(frame, vacuum_rabi, fock, sweep, reset30, warm_steady, tmp_path, capsys):
    drifts = {
        "frame": frame.trace_drift,
        "vacuum_rabi": max(r.trace_drift for r in vacuum_rabi),
        "fock": fock.run.trace_drift,
        "sweep": max(r.run.trace_drift for r in sweep),
        "reset30": reset30.run.trace_drift,
        "steady": warm_steady.trace_drift,
    }
    worst_drift = max(drifts.values())

    first, second = _csv_bytes(tmp_path, "a"), _csv_bytes(tmp_path, "b")
    identical = first.keys() == second.keys() and all(first[k] == second[k] for k in first)

    # halve the integrator tolerance on the acceptance scenarios
    fock_half = run_fock_reset(_fock_spec(5e-9))
    d_fock = 1 - fidelity(_memory(fock.run.memory_states[-1]), _memory(fock_half.run.memory_states[-1]))
    frame_half = frame_validation(P, 1.0, 400.0, memory_dim=20, n_times=2, tol=5e-9)
    d_frame = abs(frame_half.fidelities[-1] - frame.fidelities[-1])
    spec = ExperimentSpec("vacuum_rabi", P, tuple(_abar_drive(a) for a in (0.5, 1.0, 2.0)), tol=5e-9)
    d_rabi = max(float(np.abs(a.population - b.population).max()) for a, b in zip(vacuum_rabi, run_vacuum_rabi(spec)))
    halving = max(d_fock, d_frame, d_rabi)

    ok = worst_drift < 1e-8 and identical and halving < 1e-6
    report(capsys, 9, ok, f"worst trace drift {worst_drift:.1e} (< 1e-8); {len(first)} CSVs byte-identical {identical}; "
                          f"tolerance-halving change {halving:.1e} (< 1e-6)")
    assert worst_drift < 1e-8
    assert identical
    assert halving < 1e-6
