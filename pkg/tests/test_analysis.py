import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rabireset.analysis import (
    CalibrationError,
    DegenerateFitError,
    NoisyCalibrationWarning,
    ReportRow,
    calibrate_sideband,
    eps_from_shift,
    fit_damped_cosine,
    fit_exponential,
    fit_piecewise_decay,
    format_report,
    phase_slope,
    piecewise_model,
    report_csv,
    shifted_rabi_frequency,
    stark_shift,
    stark_shift_approx,
    stark_shift_gap,
)
from rabireset.model import SystemParams

TWO_PI = 2 * math.pi
PLANTED = (0.05, 5.0, 0.2, 10.0)


def _planted(n=81, span=40.0, form="corrected"):
    t = np.linspace(0, span, n)
    return t, piecewise_model(t, *PLANTED, form=form)


# --- piecewise ------------------------------------------------------------------


def test_piecewise_recovers_planted_parameters():
    t, y = _planted()
    fit = fit_piecewise_decay(t, y)
    assert np.abs(fit.params - np.array(PLANTED)).max() < 1e-6
    assert fit.max_rate == pytest.approx(1.0, abs=1e-6)


@given(st.floats(-3, 3), st.floats(1, 8), st.floats(0.05, 0.5), st.floats(8, 20))
@settings(max_examples=40, deadline=None)
def test_piecewise_continuity(A, B, gamma, t0):
    eps = 1e-9
    for form in ("corrected", "printed"):
        left = piecewise_model(t0 - eps, A, B, gamma, t0, form)
        right = piecewise_model(t0, A, B, gamma, t0, form)
        assert abs(left - right) < 1e-6


@given(st.floats(-1, 1), st.floats(0.5, 10), st.floats(0.01, 1), st.floats(1, 30))
@settings(max_examples=40, deadline=None)
def test_corrected_form_monotone(A, B, gamma, t0):
    t = np.linspace(0, 40, 400)
    assert np.all(np.diff(piecewise_model(t, A, B, gamma, t0)) <= 1e-12)


def test_printed_form_rises_before_t0():
    t = np.linspace(0, 9, 10)
    assert np.all(np.diff(piecewise_model(t, *PLANTED, form="printed")) > 0)
    t, y = _planted(form="printed")
    fit = fit_piecewise_decay(t, y, form="printed")
    assert np.abs(fit.params - np.array(PLANTED)).max() < 1e-6


def test_piecewise_time_translation():
    t, y = _planted()
    a = fit_piecewise_decay(t, y)
    b = fit_piecewise_decay(t + 7.5, y)
    assert abs(b.t0 - a.t0 - 7.5) < 1e-9
    assert np.allclose([b.A, b.B, b.gamma], [a.A, a.B, a.gamma], atol=1e-9)


def test_piecewise_noisy_fit_monotone_and_within_2_sigma():
    t, y = _planted()
    rng = np.random.default_rng(0)
    noisy = y * (1 + 0.01 * rng.standard_normal(y.size))
    fit = fit_piecewise_decay(t, noisy, weights=1 / np.abs(noisy))
    assert np.all(np.abs(fit.params - np.array(PLANTED)) <= 2 * fit.stderr)
    assert np.all(np.diff(fit(t)) <= 0)


def test_piecewise_stderr_coverage():
    # over many noise draws each 2-sigma interval should hold the truth most of the time
    t, y = _planted()
    hits = []
    for seed in range(40):
        rng = np.random.default_rng(seed)
        noisy = y * (1 + 0.01 * rng.standard_normal(y.size))
        fit = fit_piecewise_decay(t, noisy, weights=1 / np.abs(noisy))
        hits.append(np.abs(fit.params - np.array(PLANTED)) <= 2 * fit.stderr)
    assert np.all(np.mean(hits, axis=0) >= 0.8)


def test_piecewise_degenerate_data():
    t = np.linspace(0, 10, 20)
    with pytest.raises(DegenerateFitError):
        fit_piecewise_decay(t, 3.0 * np.exp(-0.4 * t))
    with pytest.raises(DegenerateFitError):
        fit_piecewise_decay(t, 10 - 0.5 * t)
    with pytest.raises(ValueError):
        fit_piecewise_decay(t[:5], t[:5])


def test_piecewise_report():
    t, y = _planted()
    rows = fit_piecewise_decay(t, y).report()
    names = [r.parameter for r in rows]
    assert names.count("max_rate") == 2
    units = {r.unit for r in rows if r.parameter == "max_rate"}
    assert units == {"photons/us", "MHz"}


# --- exponential ----------------------------------------------------------------


def test_exponential_free_decay_rate():
    p = SystemParams.device()
    t = np.linspace(0, 400, 41)
    fit = fit_exponential(t, 3.0 * np.exp(-p.kappa_m * t))
    assert fit.rate == pytest.approx(p.kappa_m, rel=0.01)
    assert fit.time_constant == pytest.approx(170, rel=0.01)


def test_exponential_with_offset_and_translation():
    t = np.linspace(2, 12, 30)
    y = 0.7 * np.exp(-0.8 * t) + 0.1
    fit = fit_exponential(t, y)
    assert np.allclose(tuple(fit), (0.7, 0.8, 0.1), atol=1e-9)
    shifted = fit_exponential(t + 5.0, y)
    assert shifted.rate == pytest.approx(fit.rate, abs=1e-9)
    assert shifted.offset == pytest.approx(fit.offset, abs=1e-9)


def test_exponential_constant_and_rising():
    t = np.linspace(0, 5, 10)
    flat = fit_exponential(t, np.full(10, 0.3))
    assert flat.amplitude == 0 and flat.rate == 0 and flat.offset == pytest.approx(0.3)
    rising = fit_exponential(t, np.exp(0.2 * t), offset=False)
    assert not rising.decaying and rising.rate < 0


def test_exponential_time_constant_example():
    t = np.linspace(0, 8, 33)
    fit = fit_exponential(t, np.exp(-t / 1.2))
    assert fit.time_constant == pytest.approx(1.2, rel=1e-9)


# --- damped cosine --------------------------------------------------------------


def test_damped_cosine_recovery():
    t = np.linspace(1.0, 20.0, 301)
    w = TWO_PI * 0.36
    y = 0.1 + 0.8 * np.exp(-0.05 * (t - 1.0)) * np.cos(w * (t - 1.0) + 0.4)
    fit = fit_damped_cosine(t, y)
    assert fit.frequency == pytest.approx(w, rel=1e-9)
    assert fit.decay == pytest.approx(0.05, rel=1e-7)
    assert np.allclose(fit(t), y, atol=1e-9)
    assert fit.period == pytest.approx(1 / 0.36)
    assert [r.parameter for r in fit.report()][:3] == ["offset", "amplitude", "frequency"]


# --- Stark shift ----------------------------------------------------------------


def test_stark_examples():
    p = SystemParams.device()
    assert stark_shift(p.chi_m, 0.0, p.omega_rabi, p.kappa_m) == 0
    abar = 6.70
    eps = abar * p.omega_rabi
    delta = stark_shift(p.chi_m, eps, p.omega_rabi, p.kappa_m)
    assert delta / TWO_PI == pytest.approx(2.56, abs=0.005)
    assert stark_shift_approx(p.chi_m, 2 * eps, p.omega_rabi) == pytest.approx(
        4 * stark_shift_approx(p.chi_m, eps, p.omega_rabi))
    with pytest.raises(ValueError):
        stark_shift(p.chi_m, 1.0, 0.0, p.kappa_m)


def test_stark_gap_shrinks():
    w = TWO_PI * 9
    gaps = [stark_shift_gap(0.2 * s, w, 2.4 * s) for s in (1, 0.1, 0.01, 0.001)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-6


@given(st.floats(0.0, 500.0))
def test_eps_from_shift_inverts(eps):
    p = SystemParams.device()
    d = stark_shift(p.chi_m, eps, p.omega_rabi, p.kappa_m)
    assert eps_from_shift(d, p.chi_m, p.omega_rabi, p.kappa_m) == pytest.approx(eps, rel=1e-9, abs=1e-9)


def test_calibration_noiseless():
    p = SystemParams.device()
    scale = TWO_PI * 60.3
    settings_ = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
    shifts = [stark_shift(p.chi_m, scale * s, p.omega_rabi, p.kappa_m) for s in settings_]
    assert shifts[0] == 0
    cal = calibrate_sideband(settings_, shifts, p.chi_m, p.omega_rabi, p.kappa_m)
    assert abs(cal.scale - scale) / scale < 1e-9
    assert cal.scale_stderr < 1e-6


def test_calibration_errors():
    p = SystemParams.device()
    with pytest.raises(CalibrationError):
        calibrate_sideband([0.25, 0.5, 1.0], [1.0, 0.5, 2.0], p.chi_m, p.omega_rabi, p.kappa_m)
    with pytest.raises(CalibrationError):
        calibrate_sideband([0.5, 1.0], [1.0, 2.0], p.chi_m, p.omega_rabi, p.kappa_m)


def test_shifted_rabi_examples():
    w = TWO_PI * 9
    assert shifted_rabi_frequency(w, 0) == w
    assert shifted_rabi_frequency(w, TWO_PI * 2.6) / TWO_PI == pytest.approx(9.368, abs=5e-4)
    with pytest.warns(NoisyCalibrationWarning):
        v = shifted_rabi_frequency(w, TWO_PI * 10.5)
    assert v / TWO_PI == pytest.approx(13.83, abs=5e-3)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        shifted_rabi_frequency(w, TWO_PI * 4.4)


def test_phase_slope():
    t = np.linspace(0, 2, 50)
    slope, se = phase_slope(t, np.angle(np.exp(1j * (3.0 * t + 0.2))))
    assert slope == pytest.approx(3.0, abs=1e-9) and se < 1e-9


# --- reports --------------------------------------------------------------------


def test_report_formats():
    rows = [ReportRow("gamma", 0.2, 0.01, "1/us"), ReportRow("A", 0.05, 0.001, "photons")]
    text = format_report(rows, "fit")
    assert "gamma" in text and "1/us" in text
    lines = report_csv(rows).splitlines()
    assert lines[0] == "parameter,value,stderr,unit"
    assert lines[1].startswith("gamma,0.2,0.01,")
