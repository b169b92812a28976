"""Curve fits and calibration formulas.

Rates are in 1/us.  A photon-number rate of ``r`` photons/us is the same
number in MHz (no factor of 2*pi); reports emit both labels.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

MIN_PIECEWISE_POINTS = 8
MIN_EXP_POINTS = 4


class DegenerateFitError(ValueError):
    """The data show no crossover between the linear and exponential branches."""


class CalibrationError(ValueError):
    pass


class NoisyCalibrationWarning(UserWarning):
    """Stark shift large compared with the Rabi frequency."""


# --- fit records -----------------------------------------------------------------


@dataclass(frozen=True)
class ReportRow:
    parameter: str
    value: float
    stderr: float
    unit: str


def format_report(rows: Sequence[ReportRow], title: str = "") -> str:
    """Aligned plain-text table, one parameter per line."""
    lines = [title] if title else []
    w = max((len(r.parameter) for r in rows), default=0)
    for r in rows:
        lines.append(f"{r.parameter:<{w}}  {r.value: .10g}  +- {r.stderr:.3g}  {r.unit}")
    return "\n".join(lines) + "\n"


def report_csv(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["parameter", "value", "stderr", "unit"])
    for r in rows:
        w.writerow([r.parameter, repr(float(r.value)), repr(float(r.stderr)), r.unit])
    return buf.getvalue()


def _covariance(jac: np.ndarray, resid: np.ndarray) -> np.ndarray:
    n, p = jac.shape
    dof = max(n - p, 1)
    s2 = float(resid @ resid) / dof
    try:
        return np.linalg.inv(jac.T @ jac) * s2
    except np.linalg.LinAlgError:
        return np.full((p, p), np.inf)


def _weights(weights, n):
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,) or np.any(w < 0):
        raise ValueError("weights must be non-negative, one per point")
    return np.sqrt(w)


# --- piecewise linear/exponential decay ------------------------------------------


FORMS = ("corrected", "printed")


def piecewise_model(t, A, B, gamma, t0, form: str = "corrected") -> np.ndarray:
    """Linear decay before ``t0``, exponential after.

    ``corrected``: ``A + B + B gamma (t0 - t)`` for ``t < t0``, continuous in
    value and slope at ``t0``.  ``printed``: ``A + B + B gamma (t - t0)``,
    continuous in value only and rising before ``t0``.
    """
    t = np.asarray(t, dtype=float)
    if form not in FORMS:
        raise ValueError(f"unknown form {form!r}")
    s = 1.0 if form == "corrected" else -1.0
    early = A + B + s * B * gamma * (t0 - t)
    late = A + B * np.exp(-gamma * np.clip(t - t0, 0.0, None))
    return np.where(t < t0, early, late)


def _piecewise_jac(t, A, B, gamma, t0, form):
    s = 1.0 if form == "corrected" else -1.0
    early = t < t0
    e = np.exp(-gamma * np.clip(t - t0, 0.0, None))
    j = np.empty((t.size, 4))
    j[:, 0] = 1.0
    j[:, 1] = np.where(early, 1.0 + s * gamma * (t0 - t), e)
    j[:, 2] = np.where(early, s * B * (t0 - t), -B * (t - t0) * e)
    j[:, 3] = np.where(early, s * B * gamma, B * gamma * e)
    return j


@dataclass(frozen=True)
class PiecewiseFit:
    A: float
    B: float
    gamma: float
    t0: float
    covariance: np.ndarray = field(repr=False)
    residual_norm: float = 0.0
    form: str = "corrected"

    @property
    def params(self) -> np.ndarray:
        return np.array([self.A, self.B, self.gamma, self.t0])

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def max_rate(self) -> float:
        """Largest decay rate ``B gamma`` in photons/us."""
        return self.B * self.gamma

    @property
    def max_rate_stderr(self) -> float:
        g = np.array([0.0, self.gamma, self.B, 0.0])
        return float(math.sqrt(max(g @ self.covariance @ g, 0.0)))

    def __call__(self, t) -> np.ndarray:
        return piecewise_model(t, self.A, self.B, self.gamma, self.t0, self.form)

    def report(self) -> list[ReportRow]:
        se = self.stderr
        return [
            ReportRow("A", self.A, se[0], "photons"),
            ReportRow("B", self.B, se[1], "photons"),
            ReportRow("gamma", self.gamma, se[2], "1/us"),
            ReportRow("t0", self.t0, se[3], "us"),
            ReportRow("max_rate", self.max_rate, self.max_rate_stderr, "photons/us"),
            ReportRow("max_rate", self.max_rate, self.max_rate_stderr, "MHz"),
            ReportRow("residual_norm", self.residual_norm, 0.0, "photons"),
        ]


def _t0_candidates(t: np.ndarray, y: np.ndarray) -> list[float]:
    inner = t[1:-1]
    cands = list(np.quantile(inner, [0.1, 0.25, 0.4, 0.55, 0.7, 0.85]))
    if t.size >= 5:
        # sharpest bend of the sampled curve
        d2 = np.abs(np.diff(y, 2))
        cands.append(float(t[1 + int(np.argmax(d2))]))
    return cands


def _piecewise_start(t, y, t0):
    A = float(min(y.min(), y[-1]))
    y0 = float(np.interp(t0, t, y))
    B = max(y0 - A, 1e-3 * max(np.ptp(y), 1e-12))
    early = t <= t0
    if early.sum() >= 2:
        slope = -np.polyfit(t[early], y[early], 1)[0]
    else:
        slope = (y[0] - y[-1]) / max(t[-1] - t[0], 1e-12)
    gamma = max(slope / B, 1e-6)
    return np.array([A, B, gamma, t0])


def fit_piecewise_decay(times, nbars, weights=None, form: str = "corrected") -> PiecewiseFit:
    """Least-squares fit of the linear-then-exponential decay.

    ``t0`` is a free parameter bounded to the sampled span; several starting
    values of ``t0`` are tried and the best solution kept.  Raises
    :class:`DegenerateFitError` when the best ``t0`` sits on an end of the
    data, meaning one branch is absent.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(nbars, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise ValueError("times and values must be 1-d arrays of equal length")
    if t.size < MIN_PIECEWISE_POINTS:
        raise ValueError(f"need at least {MIN_PIECEWISE_POINTS} points, got {t.size}")
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    sw = _weights(weights, t.size)
    lo = [-np.inf, 0.0, 0.0, t[0]]
    hi = [np.inf, np.inf, np.inf, t[-1]]

    def resid(p):
        return sw * (piecewise_model(t, *p, form=form) - y)

    def jac(p):
        return sw[:, None] * _piecewise_jac(t, *p, form)

    best = None
    for t0 in _t0_candidates(t, y):
        p0 = _piecewise_start(t, y, t0)
        sol = least_squares(resid, p0, jac=jac, bounds=(lo, hi), method="trf", x_scale="jac",
                            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        if best is None or sol.cost < best.cost - 1e-18:
            best = sol
    A, B, gamma, t0 = best.x
    span = t[-1] - t[0]
    step = float(np.min(np.diff(t)))
    if B <= 0 or gamma <= 0 or t0 - t[0] < 0.5 * step or t[-1] - t0 < 0.5 * step:
        raise DegenerateFitError(
            f"no crossover inside the data (t0 = {t0:.4g} on [{t[0]:.4g}, {t[-1]:.4g}]); "
            "fit a single branch with fit_exponential or a line instead"
        )
    if span <= 0:
        raise DegenerateFitError("zero time span")
    cov = _covariance(best.jac, best.fun)
    return PiecewiseFit(float(A), float(B), float(gamma), float(t0), cov, float(np.linalg.norm(best.fun)), form)


# --- exponential ----------------------------------------------------------------------


@dataclass(frozen=True)
class ExponentialFit:
    amplitude: float
    rate: float
    offset: float
    covariance: np.ndarray = field(repr=False)
    decaying: bool = True

    def __iter__(self):
        return iter((self.amplitude, self.rate, self.offset))

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def time_constant(self) -> float:
        return math.inf if self.rate == 0 else 1.0 / self.rate

    def __call__(self, t):
        return self.amplitude * np.exp(-self.rate * np.asarray(t, dtype=float)) + self.offset

    def report(self) -> list[ReportRow]:
        se = self.stderr
        tau_se = se[1] / self.rate**2 if self.rate else math.inf
        return [
            ReportRow("amplitude", self.amplitude, se[0], "data"),
            ReportRow("rate", self.rate, se[1], "1/us"),
            ReportRow("offset", self.offset, se[2], "data"),
            ReportRow("time_constant", self.time_constant, tau_se, "us"),
        ]


def fit_exponential(times, values, offset: bool = True) -> ExponentialFit:
    """Levenberg-Marquardt fit of ``A exp(-gamma t) + C``.

    Constant data return amplitude and rate 0.  A negative fitted rate is
    returned with ``decaying=False`` rather than raised.  ``offset=False``
    pins ``C = 0``.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.shape != y.shape or t.size < MIN_EXP_POINTS:
        raise ValueError(f"need at least {MIN_EXP_POINTS} points of equal-length data")
    scale = max(np.abs(y).max(), 1e-300)
    if np.ptp(y) <= 1e-12 * scale:
        return ExponentialFit(0.0, 0.0, float(y.mean()), np.zeros((3, 3)), True)
    tc = t - t[0]
    c0 = y[-1] if offset else 0.0
    d = y - c0
    pos = np.abs(d) > 1e-3 * np.abs(d).max()
    if pos.sum() >= 2 and np.all(np.sign(d[pos]) == np.sign(d[pos][0])):
        g0 = -np.polyfit(tc[pos], np.log(np.abs(d[pos])), 1)[0]
    else:
        g0 = 1.0 / max(np.ptp(t), 1e-12)
    g0 = g0 if np.isfinite(g0) and g0 != 0 else 1.0 / max(np.ptp(t), 1e-12)
    a0 = d[0]

    def model(p):
        a, g = p[0], p[1]
        c = p[2] if offset else 0.0
        return a * np.exp(-g * tc) + c

    def resid(p):
        return model(p) - y

    def jac(p):
        a, g = p[0], p[1]
        e = np.exp(-g * tc)
        cols = [e, -a * tc * e] + ([np.ones_like(tc)] if offset else [])
        return np.column_stack(cols)

    p0 = [a0, g0, c0] if offset else [a0, g0]
    sol = least_squares(resid, p0, jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
    a, g = sol.x[0], sol.x[1]
    c = sol.x[2] if offset else 0.0
    cov = _covariance(sol.jac, sol.fun)
    if not offset:
        cov = np.pad(cov, ((0, 1), (0, 1)))
    # refer the amplitude back to t = 0
    a_abs = a * math.exp(g * t[0])
    jac_shift = np.diag([math.exp(g * t[0]), 1.0, 1.0])
    jac_shift[0, 1] = a * t[0] * math.exp(g * t[0])
    cov = jac_shift @ cov @ jac_shift.T
    return ExponentialFit(float(a_abs), float(g), float(c), cov, bool(g > 0))


# --- damped oscillation ------------------------------------------------------------------


@dataclass(frozen=True)
class OscillationFit:
    offset: float
    amplitude: float
    frequency: float  # angular, rad/us
    phase: float
    decay: float
    covariance: np.ndarray = field(repr=False)
    t_start: float = 0.0

    @property
    def period(self) -> float:
        return 2 * math.pi / self.frequency

    def __call__(self, t):
        tc = np.asarray(t, dtype=float) - self.t_start
        return self.offset + self.amplitude * np.exp(-self.decay * tc) * np.cos(self.frequency * tc + self.phase)

    def report(self) -> list[ReportRow]:
        se = self.stderr
        return [
            ReportRow("offset", self.offset, se[0], "data"),
            ReportRow("amplitude", self.amplitude, se[1], "data"),
            ReportRow("frequency", self.frequency, se[2], "rad/us"),
            ReportRow("frequency_mhz", self.frequency / (2 * math.pi), se[2] / (2 * math.pi), "MHz"),
            ReportRow("phase", self.phase, se[3], "rad"),
            ReportRow("decay", self.decay, se[4], "1/us"),
        ]

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))


def fit_damped_cosine(times, values) -> OscillationFit:
    """``c + a exp(-d t) cos(w t + phi)``, frequency seeded from the FFT peak."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.size < 8:
        raise ValueError("need at least 8 points")
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-6):
        raise ValueError("damped-cosine fit expects uniform sampling")
    yc = y - y.mean()
    n_pad = 16 * t.size
    spec = np.abs(np.fft.rfft(yc, n_pad))
    freqs = np.fft.rfftfreq(n_pad, dt[0]) * 2 * math.pi
    k = int(np.argmax(spec[1:])) + 1
    w0 = freqs[k]
    tc = t - t[0]

    def model(p):
        c, a, w, phi, d = p
        return c + a * np.exp(-d * tc) * np.cos(w * tc + phi)

    def jac(p):
        c, a, w, phi, d = p
        e = np.exp(-d * tc)
        cs, sn = np.cos(w * tc + phi), np.sin(w * tc + phi)
        return np.column_stack([np.ones_like(tc), e * cs, -a * tc * e * sn, -a * e * sn, -a * tc * e * cs])

    best = None
    for phi0 in (0.0, math.pi / 2, math.pi, -math.pi / 2):
        p0 = [y.mean(), 0.5 * np.ptp(y), w0, phi0, 0.0]
        sol = least_squares(lambda p: model(p) - y, p0, jac=jac, method="lm", xtol=1e-14, ftol=1e-14)
        if best is None or sol.cost < best.cost:
            best = sol
    c, a, w, phi, d = best.x
    if a < 0:
        a, phi = -a, phi + math.pi
    if w < 0:
        w, phi = -w, -phi
    phi = (phi + math.pi) % (2 * math.pi) - math.pi
    return OscillationFit(float(c), float(a), float(w), float(phi), float(d), _covariance(best.jac, best.fun), float(t[0]))


# --- Stark shift and calibration ----------------------------------------------------------


def stark_shift(chi: float, eps: float, omega_rabi: float, kappa: float) -> float:
    """Qubit frequency shift ``Re(8 chi eps^2 / (4 W^2 + (kappa - 2i chi)^2))`` in rad/us."""
    if omega_rabi <= 0:
        raise ValueError("omega_rabi must be > 0")
    return float(np.real(8 * chi * abs(eps) ** 2 / (4 * omega_rabi**2 + (kappa - 2j * chi) ** 2)))


def stark_shift_approx(chi: float, eps: float, omega_rabi: float) -> float:
    """Leading-order shift ``2 chi (eps / W)^2``."""
    return 2 * chi * (abs(eps) / omega_rabi) ** 2


def stark_shift_gap(chi: float, omega_rabi: float, kappa: float) -> float:
    """Relative difference between the approximate and exact shift (independent of eps)."""
    exact = stark_shift(chi, 1.0, omega_rabi, kappa)
    return abs(stark_shift_approx(chi, 1.0, omega_rabi) - exact) / abs(exact)


def _stark_gain(chi, omega_rabi, kappa) -> float:
    return stark_shift(chi, 1.0, omega_rabi, kappa)


def eps_from_shift(shift: float, chi: float, omega_rabi: float, kappa: float) -> float:
    """Invert :func:`stark_shift` (quadratic in ``eps``) for ``eps >= 0``."""
    gain = _stark_gain(chi, omega_rabi, kappa)
    if shift / gain < 0:
        raise CalibrationError(f"shift {shift:.4g} has the wrong sign for this dispersive shift")
    return math.sqrt(shift / gain)


@dataclass(frozen=True)
class StarkCalibration:
    settings: np.ndarray
    shifts: np.ndarray
    eps: np.ndarray
    scale: float
    covariance: float

    @property
    def scale_stderr(self) -> float:
        return math.sqrt(max(self.covariance, 0.0))

    def report(self) -> list[ReportRow]:
        return [
            ReportRow("eps_scale", self.scale, self.scale_stderr, "rad/us per unit setting"),
            ReportRow("eps_scale_hz", self.scale / (2 * math.pi) * 1e6, self.scale_stderr / (2 * math.pi) * 1e6,
                      "Hz per unit setting"),
        ]


def calibrate_sideband(settings, shifts, chi: float, omega_rabi: float, kappa: float) -> StarkCalibration:
    """Drive-amplitude scale from Stark shifts measured at several settings.

    Each shift is converted to ``eps`` with the exact formula; a line through
    the origin ``eps = scale * setting`` is then fitted.
    """
    s = np.abs(np.asarray(settings, dtype=float))
    d = np.asarray(shifts, dtype=float)
    if s.shape != d.shape or s.size < 3:
        raise CalibrationError("need at least 3 (setting, shift) pairs")
    order = np.argsort(s)
    s, d = s[order], d[order]
    sign = np.sign(_stark_gain(chi, omega_rabi, kappa))
    dd = sign * d
    tol = 1e-9 * max(np.abs(dd).max(), 1e-300)
    if np.any(np.diff(dd) < -tol) or np.any(dd < -tol):
        raise CalibrationError("shift does not grow monotonically with drive amplitude")
    eps = np.array([eps_from_shift(max(x, 0.0) * sign, chi, omega_rabi, kappa) for x in dd])
    ss = float(s @ s)
    if ss == 0:
        raise CalibrationError("all settings are zero")
    scale = float(s @ eps) / ss
    if not scale > 0:
        raise CalibrationError("calibrated scale is not positive")
    r = eps - scale * s
    var = float(r @ r) / max(s.size - 1, 1) / ss
    return StarkCalibration(s, d, eps, scale, var)


def shifted_rabi_frequency(omega_rabi: float, delta: float) -> float:
    """Rabi frequency seen from a frame detuned by the Stark shift ``delta``.

    Warns with :class:`NoisyCalibrationWarning` when ``delta > omega_rabi/2``,
    where the oscillation contrast drops.
    """
    if abs(delta) > 0.5 * abs(omega_rabi):
        warnings.warn(
            f"Stark shift {delta:.4g} exceeds half the Rabi frequency {omega_rabi:.4g}; "
            "use an off-resonant sideband for this calibration",
            NoisyCalibrationWarning,
            stacklevel=2,
        )
    return math.hypot(omega_rabi, delta)


def phase_slope(times, phases) -> tuple[float, float]:
    """Slope and its standard error of a straight-line fit to unwrapped phases."""
    t = np.asarray(times, dtype=float)
    p = np.unwrap(np.asarray(phases, dtype=float))
    coef, cov = np.polyfit(t, p, 1, cov=True) if t.size > 3 else (np.polyfit(t, p, 1), np.zeros((2, 2)))
    return float(coef[0]), float(math.sqrt(max(cov[0, 0], 0.0)))
