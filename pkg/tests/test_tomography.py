import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rabireset.hilbert import DensityMatrix, SpaceLayout, coherent_state, displacement, fidelity, fock_state, thermal_state
from rabireset.tomography import (
    CharSamples,
    InsufficientDataError,
    SampleTruncationWarning,
    UnderdeterminedWarning,
    characteristic_function,
    closed_form_thermal,
    curvature_at_origin,
    displacement_elements,
    extract_nbar,
    nbar_from_curvature,
    reconstruct_state,
    sample_axes,
    sample_grid,
    suggest_max_alpha,
    thermal_samples,
    vacuum_probability,
)


def _mix(p1, dim=20):
    return DensityMatrix(SpaceLayout((dim,)), np.diag([1 - p1, p1] + [0] * (dim - 2)).astype(complex))


# --- characteristic function ----------------------------------------------------


def test_displacement_elements_match_matrix_exponential():
    for a in (0.3 + 0.2j, -1.1j, 1.5):
        ref = displacement(a, 60).full()[:20, :20]
        assert np.allclose(displacement_elements(a, 20), ref, atol=1e-10)


def test_closed_form_examples():
    alphas = np.array([0, 0.3, 0.7j, -0.5 + 0.5j, 1.2])
    vac = characteristic_function(fock_state(0, 20), alphas)
    assert np.allclose(vac, np.exp(-np.abs(alphas) ** 2 / 2), atol=1e-12)
    for nbar in (0.4, 1.5):
        th = characteristic_function(thermal_state(nbar, 80), alphas)
        assert np.allclose(th, closed_form_thermal(nbar, alphas), atol=1e-9)
    assert characteristic_function(coherent_state(0.8 - 0.3j, 30), 0.0) == pytest.approx(1.0)


def test_coherent_state_closed_form():
    beta = 0.9
    alphas = np.linspace(-1.5, 1.5, 7) * 1j
    ref = np.exp(-np.abs(alphas) ** 2 / 2) * np.exp(alphas * np.conj(beta) - np.conj(alphas) * beta)
    assert np.allclose(characteristic_function(coherent_state(beta, 40), alphas), ref, atol=1e-9)


@given(st.integers(0, 10**6), st.floats(-2, 2), st.floats(-2, 2))
@settings(max_examples=30, deadline=None)
def test_hermiticity_symmetry(seed, re, im):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    m = g @ g.conj().T
    rho = DensityMatrix(SpaceLayout((8,)), m / np.trace(m))
    a = complex(re, im)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SampleTruncationWarning)
        assert abs(characteristic_function(rho, -a) - np.conj(characteristic_function(rho, a))) < 1e-10
    assert abs(characteristic_function(rho, 0) - 1) < 1e-12


def test_truncation_warning():
    with pytest.warns(SampleTruncationWarning):
        characteristic_function(fock_state(0, 4), 2.0)


def test_curvature_identity():
    for nbar in (0.0, 0.5, 1.0, 2.0, 5.0):
        c = curvature_at_origin(thermal_state(nbar, 200))
        assert c == pytest.approx(-(nbar + 0.5), abs=1e-9)
        assert abs(nbar_from_curvature(c, c) - nbar) < 1e-9


# --- sampling -------------------------------------------------------------------


def test_sample_axes_structure():
    s = sample_axes(thermal_state(0.7, 40), 2.0, 21)
    assert np.sum(s.alphas == 0) == 1 and s.values[s.alphas == 0][0] == pytest.approx(1.0, abs=1e-9)
    xr, cr = s.axis("real")
    xi, ci = s.axis("imaginary")
    assert np.allclose(xr, xi) and np.allclose(cr, ci, atol=1e-12)
    xp, prof = s.profile()
    assert np.allclose(prof, cr.real)
    with pytest.raises(ValueError):
        sample_axes(thermal_state(0.7, 40), 2.0, 3)


def test_displaced_state_breaks_imaginary_axis_symmetry():
    s = sample_axes(coherent_state(1.0, 30), 1.5, 21)
    xi, ci = s.axis("imaginary")
    assert np.abs(ci.imag).max() > 0.3
    xr, cr = s.axis("real")
    assert np.abs(cr.imag).max() < 1e-12


def test_c_at_origin_enforced():
    with pytest.raises(ValueError):
        CharSamples(np.array([0, 0.1]), np.array([0.9, 0.8]))


# --- photon number --------------------------------------------------------------


def test_vacuum_nbar():
    est = extract_nbar(sample_axes(fock_state(0, 30), suggest_max_alpha(fock_state(0, 30)), 41))
    assert abs(est.nbar) < 1e-3


@pytest.mark.parametrize("nbar", [0.0, 0.5, 1.0, 2.0, 5.0])
def test_thermal_oracle(nbar):
    # closed-form samples on a grid sized to where C falls to 1/2
    max_alpha = math.sqrt(math.log(2) / (nbar + 0.5))
    est = extract_nbar(thermal_samples(nbar, max_alpha, 41))
    assert abs(est.nbar - nbar) <= 0.02 * max(nbar, 1.0)
    assert est.uncertainty >= 0
    assert est.threshold == 0.8


def test_thermal_one_example():
    est = extract_nbar(thermal_samples(1.0, 1.0, 41))
    assert est.nbar == pytest.approx(1.0, abs=0.02)


def test_linear_fit_biased_low():
    # the plain parabola underestimates; the cubic default does not
    s = thermal_samples(2.0, 0.6, 41)
    assert extract_nbar(s, order=1).nbar < 1.9
    assert extract_nbar(s).nbar == pytest.approx(2.0, abs=1e-3)


def test_insufficient_data_names_alpha():
    s = thermal_samples(5.0, 3.0, 11)
    with pytest.raises(InsufficientDataError) as err:
        extract_nbar(s)
    assert err.value.max_usable_alpha is not None and err.value.max_usable_alpha < 3.0
    retry = thermal_samples(5.0, err.value.max_usable_alpha, 11)
    assert extract_nbar(retry).nbar == pytest.approx(5.0, rel=0.02)


# --- reconstruction -------------------------------------------------------------


def test_vacuum_probability_examples():
    assert vacuum_probability(fock_state(0, 5)) == 1
    assert vacuum_probability(coherent_state(1.0, 40)) == pytest.approx(math.exp(-1), abs=1e-9)
    assert vacuum_probability(thermal_state(1.0, 60)) == pytest.approx(0.5, abs=1e-9)


def test_reconstruct_fock_one():
    rho = reconstruct_state(sample_grid(fock_state(1, 20), 2.0, 13), 6)
    p = np.real(np.diag(rho.matrix))
    assert p[0] < 0.05 and p[1] > 0.9


def test_reconstruct_vacuum():
    rho = reconstruct_state(sample_grid(fock_state(0, 20), 2.0, 13), 6)
    assert vacuum_probability(rho) > 0.99


def test_reconstruct_mixture():
    rho = reconstruct_state(sample_grid(_mix(0.8), 2.0, 13), 6)
    assert vacuum_probability(rho) == pytest.approx(0.2, abs=0.03)


@given(st.integers(0, 10**6))
@settings(max_examples=10, deadline=None)
def test_reconstruction_round_trip(seed):
    rng = np.random.default_rng(seed)
    dim = 6
    # zero-padded to 20 levels so the grid corners stay clear of the cutoff
    g = np.zeros((20, 20), complex)
    g[:3, :3] = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    m = g @ g.conj().T
    rho = DensityMatrix(SpaceLayout((20,)), m / np.trace(m))
    rec = reconstruct_state(sample_grid(rho, 2.0, 13), dim, full=True)
    small = DensityMatrix(SpaceLayout((dim,)), rho.matrix[:dim, :dim])
    assert fidelity(rec.state, small) >= 0.99
    assert rec.residual < 1e-3


def test_underdetermined_warning():
    with pytest.warns(UnderdeterminedWarning):
        reconstruct_state(sample_axes(fock_state(0, 6), 1.0, 5), 6)


def test_csv_round_trip(tmp_path):
    s = sample_axes(thermal_state(0.3, 30), 1.5, 11)
    path = tmp_path / "c.csv"
    s.to_csv(path)
    back = CharSamples.from_csv(path)
    assert np.array_equal(back.alphas, s.alphas) and np.array_equal(back.values, s.values)
    assert set(back.axes) == {"real", "imaginary"}
    assert path.read_text().splitlines()[0] == "re_alpha,im_alpha,re_C,im_C"
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y\n1,2\n")
    with pytest.raises(ValueError):
        CharSamples.from_csv(bad)
