"""System parameters, Hamiltonians and frame maps for the driven three-part system.

Internal units are microseconds and angular frequencies in rad/us, so a rate
quoted as ``f`` MHz (cycles) enters as ``2*pi*f``.  Conversion from Hz and
seconds happens once, in :meth:`SystemParams.from_si` (used by the CLI config
reader).

Three frames are used:

``rotating-lab``
    every subsystem rotates at its bare frequency; the Rabi drive is applied at
    the Stark-shifted qubit frequency, the sidebands at ``detuning`` from the
    modes.
``displaced-rotating``
    the rotating-lab frame additionally displaced by the classical sideband
    amplitude of each mode, so only fluctuations around it are simulated.
``effective-jc``
    the displaced frame in the interaction picture of the Rabi drive, written
    in the dressed qubit basis ``(|->, |+>)``.  Here the sidebands appear as
    Jaynes-Cummings couplings ``chi_i * abar_i``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .hilbert import (
    MEMORY,
    QUBIT,
    READOUT,
    DensityMatrix,
    Operator,
    SpaceLayout,
    annihilation,
    default_layout,
    displacement,
    embed,
    identity,
    number,
    pauli,
)

TWO_PI = 2.0 * math.pi
# Ratio of Rabi frequency to the coupling scales above which the effective
# Jaynes-Cummings description is flagged as valid.
VALIDITY_RATIO = 10.0


class FrameTag(str, enum.Enum):
    ROTATING_LAB = "rotating-lab"
    DISPLACED_ROTATING = "displaced-rotating"
    EFFECTIVE_JC = "effective-jc"

    def __str__(self):
        return self.value


class InvalidParamsError(ValueError):
    pass


@dataclass(frozen=True)
class SystemParams:
    """Physical rates of the device, in rad/us and us.

    ``chi_m``/``chi_r`` are half the dispersive shifts.  ``bath_occupation``
    is the thermal occupation of both mode baths (zero temperature by
    default).
    """

    chi_m: float
    chi_r: float
    kappa_m: float
    kappa_r: float
    t1_q: float
    t2_echo_q: float
    omega_rabi: float
    layout: SpaceLayout = field(default_factory=default_layout)
    anharmonicity: float | None = None
    bath_occupation: float = 0.0

    def __post_init__(self):
        for name in ("chi_m", "chi_r", "kappa_m", "kappa_r", "t1_q", "t2_echo_q", "omega_rabi"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidParamsError(f"{name} must be finite and > 0, got {v}")
        if self.t2_echo_q > 2 * self.t1_q * (1 + 1e-12):
            raise InvalidParamsError(f"T2 = {self.t2_echo_q} exceeds 2*T1 = {2 * self.t1_q}")
        if self.bath_occupation < 0:
            raise InvalidParamsError("bath_occupation must be >= 0")
        if len(self.layout) != 3 or self.layout.dims[QUBIT] != 2:
            raise InvalidParamsError(f"layout must be (2, memory, readout), got {self.layout.dims}")

    @classmethod
    def device(cls, layout: SpaceLayout | None = None, **overrides) -> "SystemParams":
        """The flute-cavity device: 2chi_m = 57 kHz, 2chi_r = 0.635 MHz, ..."""
        base = dict(
            chi_m=TWO_PI * 0.057 / 2,
            chi_r=TWO_PI * 0.635 / 2,
            kappa_m=1.0 / 170.0,
            kappa_r=TWO_PI * 0.382,
            t1_q=25.0,
            t2_echo_q=20.0,
            omega_rabi=TWO_PI * 9.0,
            anharmonicity=TWO_PI * 265.0,
            layout=layout or default_layout(),
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_si(
        cls,
        dispersive_shift_m_hz: float,
        dispersive_shift_r_hz: float,
        memory_lifetime_s: float,
        kappa_r_hz: float,
        t1_s: float,
        t2_echo_s: float,
        rabi_hz: float,
        anharmonicity_hz: float | None = None,
        layout: SpaceLayout | None = None,
        bath_occupation: float = 0.0,
    ) -> "SystemParams":
        """Build from experimentalist units: frequencies/2pi in Hz, times in s.

        Dispersive shifts are the full ``2 chi / 2pi``; ``kappa_r_hz`` is the
        linewidth ``kappa_r / 2pi``.
        """
        ang = lambda hz: TWO_PI * hz * 1e-6  # noqa: E731  Hz -> rad/us
        return cls(
            chi_m=ang(dispersive_shift_m_hz) / 2,
            chi_r=ang(dispersive_shift_r_hz) / 2,
            kappa_m=1.0 / (memory_lifetime_s * 1e6),
            kappa_r=ang(kappa_r_hz),
            t1_q=t1_s * 1e6,
            t2_echo_q=t2_echo_s * 1e6,
            omega_rabi=ang(rabi_hz),
            anharmonicity=None if anharmonicity_hz is None else ang(anharmonicity_hz),
            layout=layout or default_layout(),
            bath_occupation=bath_occupation,
        )

    def with_layout(self, *dims: int) -> "SystemParams":
        return replace(self, layout=default_layout(*dims))

    @property
    def kappa(self) -> float:
        """The readout linewidth, the reference rate for couplings and cooling."""
        return self.kappa_r

    @property
    def gamma_phi(self) -> float:
        """Pure dephasing rate ``1/T2 - 1/(2 T1)``."""
        return max(1.0 / self.t2_echo_q - 0.5 / self.t1_q, 0.0)

    def chi(self, slot: int) -> float:
        return {MEMORY: self.chi_m, READOUT: self.chi_r}[slot]

    def kappa_of(self, slot: int) -> float:
        return {MEMORY: self.kappa_m, READOUT: self.kappa_r}[slot]

    def abar_for_coupling(self, g_over_kappa: float, slot: int) -> float:
        """|abar| giving ``chi_i |abar_i| = g_over_kappa * kappa_r``."""
        return g_over_kappa * self.kappa_r / self.chi(slot)

    def to_dict(self) -> dict:
        return {
            "chi_m": self.chi_m,
            "chi_r": self.chi_r,
            "kappa_m": self.kappa_m,
            "kappa_r": self.kappa_r,
            "t1_q": self.t1_q,
            "t2_echo_q": self.t2_echo_q,
            "omega_rabi": self.omega_rabi,
            "anharmonicity": self.anharmonicity,
            "bath_occupation": self.bath_occupation,
            "dims": list(self.layout.dims),
            "units": "rad/us, us",
        }


@dataclass(frozen=True)
class DriveParams:
    """Complex sideband amplitudes in rad/us.

    ``rabi`` scales the Rabi drive (0 switches it off).  The sideband on mode
    ``i`` enters as ``eps_i a_i^dag exp(-i D_i t) + h.c.``
    with ``D_i = sign_i * omega_rabi``.  With equal signs on both modes the
    engineered couplings cool the memory; the default ``-1`` makes the
    classical amplitude rotate as ``abar * exp(+i omega_rabi t)``.
    ``detuning_m``/``detuning_r`` replace ``D_i`` for sidebands placed away
    from the dressed-state resonance.
    """

    eps_m: complex = 0.0
    eps_r: complex = 0.0
    sign_m: int = -1
    sign_r: int = -1
    rabi: float = 1.0
    detuning_m: float | None = None
    detuning_r: float | None = None

    def __post_init__(self):
        for s in (self.sign_m, self.sign_r):
            if s not in (-1, 1):
                raise InvalidParamsError(f"sideband sign must be +1 or -1, got {s}")
        for e in (self.eps_m, self.eps_r):
            if not np.isfinite(complex(e)):
                raise InvalidParamsError("drive amplitudes must be finite")

    def eps(self, slot: int) -> complex:
        return complex({MEMORY: self.eps_m, READOUT: self.eps_r}[slot])

    def sign(self, slot: int) -> int:
        return {MEMORY: self.sign_m, READOUT: self.sign_r}[slot]

    def detuning(self, params: SystemParams, slot: int) -> float:
        override = {MEMORY: self.detuning_m, READOUT: self.detuning_r}[slot]
        if override is not None:
            return float(override)
        return self.sign(slot) * params.omega_rabi

    def abar(self, params: SystemParams, slot: int) -> complex:
        """Steady classical amplitude produced by this drive."""
        return steady_amplitude(self.eps(slot), self.detuning(params, slot), params.kappa_of(slot))

    @classmethod
    def from_couplings(
        cls, params: SystemParams, g_m_over_kappa: float, g_r_over_kappa: float, sign_m: int = -1, sign_r: int = -1
    ) -> "DriveParams":
        """Drives whose steady amplitudes give ``chi_i |abar_i| = g_i``."""
        eps = []
        for slot, g, s in ((MEMORY, g_m_over_kappa, sign_m), (READOUT, g_r_over_kappa, sign_r)):
            abar = params.abar_for_coupling(g, slot)
            eps.append(eps_for_abar(abar, s * params.omega_rabi, params.kappa_of(slot)))
        return cls(eps[0], eps[1], sign_m, sign_r)


# --- sideband amplitude ---------------------------------------------------------


def sideband_amplitude(eps: complex, omega_rabi: float, kappa: float) -> complex:
    """Coherent amplitude ``eps / (i omega_rabi - kappa/2)`` induced by a sideband."""
    if omega_rabi <= 0:
        raise InvalidParamsError("omega_rabi must be > 0")
    return complex(eps) / (1j * omega_rabi - kappa / 2)


def sideband_amplitude_approx(eps: complex, omega_rabi: float) -> complex:
    return complex(eps) / (1j * omega_rabi)


def sideband_amplitude_gap(omega_rabi: float, kappa: float) -> float:
    """Relative difference between exact and approximate amplitudes."""
    exact = sideband_amplitude(1.0, omega_rabi, kappa)
    return abs(exact - sideband_amplitude_approx(1.0, omega_rabi)) / abs(exact)


def steady_amplitude(eps: complex, detuning: float, kappa: float) -> complex:
    """Steady state of ``d beta/dt = -i eps e^{-i D t} - kappa beta / 2``.

    Returns ``abar`` with ``beta(t) = abar exp(-i D t)``; its modulus equals
    that of :func:`sideband_amplitude` for ``|D| = omega_rabi``.
    """
    return complex(eps) / (detuning + 0.5j * kappa)


def eps_for_abar(abar: complex, detuning: float, kappa: float) -> complex:
    return complex(abar) * (detuning + 0.5j * kappa)


# --- validity ---------------------------------------------------------------------


@dataclass(frozen=True)
class Validity:
    rabi_over_chi: float
    rabi_over_coupling: float
    below_anharmonicity: bool | None

    @property
    def valid(self) -> bool:
        ok = self.rabi_over_chi >= VALIDITY_RATIO and self.rabi_over_coupling >= VALIDITY_RATIO
        return ok and self.below_anharmonicity is not False


def validity(params: SystemParams, abar_m: complex = 0.0, abar_r: complex = 0.0) -> Validity:
    chi_max = max(params.chi_m, params.chi_r)
    g_max = max(params.chi_m * abs(abar_m), params.chi_r * abs(abar_r), 1e-300)
    anh = None if params.anharmonicity is None else params.omega_rabi < params.anharmonicity
    return Validity(params.omega_rabi / chi_max, params.omega_rabi / g_max, anh)


# --- operators on the full layout ------------------------------------------------


@dataclass(frozen=True)
class SystemOperators:
    """Embedded ladder and Pauli operators for a three-part layout."""

    layout: SpaceLayout

    def _q(self, which):
        return embed(pauli(which), self.layout, QUBIT)

    @property
    def sx(self):
        return self._q("x")

    @property
    def sy(self):
        return self._q("y")

    @property
    def sz(self):
        return self._q("z")

    @property
    def sp(self):
        return self._q("plus")

    @property
    def sm(self):
        return self._q("minus")

    def a(self, slot: int) -> Operator:
        return embed(annihilation(self.layout.dims[slot]), self.layout, slot)

    def n(self, slot: int) -> Operator:
        return embed(number(self.layout.dims[slot]), self.layout, slot)

    @property
    def eye(self):
        return identity(self.layout)


# --- Hamiltonians -------------------------------------------------------------------


Coefficient = Callable[[float], complex]


@dataclass(frozen=True)
class Hamiltonian:
    """``H(t) = sum_k c_k(t) O_k``; a term with coefficient ``None`` is static.

    Individual ``O_k`` may be non-Hermitian as long as the sum is Hermitian at
    every ``t`` (e.g. ``a^dag`` and ``a`` with conjugate coefficients).
    """

    frame: FrameTag
    terms: tuple[tuple[Operator, Coefficient | None], ...]

    def __post_init__(self):
        for op, _ in self.terms:
            if op.frame is not None and op.frame != str(self.frame):
                raise ValueError(f"term tagged {op.frame!r} in a {self.frame} Hamiltonian")

    @property
    def layout(self) -> SpaceLayout:
        return self.terms[0][0].layout

    def __call__(self, t: float) -> Operator:
        out = None
        for op, c in self.terms:
            term = op if c is None else op * c(t)
            out = term if out is None else out + term
        return out.with_frame(str(self.frame))

    def __add__(self, other: "Hamiltonian") -> "Hamiltonian":
        if self.frame != other.frame:
            from .hilbert import FrameMismatchError

            raise FrameMismatchError(f"cannot add {self.frame} and {other.frame} Hamiltonians")
        return Hamiltonian(self.frame, self.terms + other.terms)

    @property
    def is_static(self) -> bool:
        return all(c is None for _, c in self.terms)


def dispersive_hamiltonian(params: SystemParams) -> Operator:
    """``sum_i chi_i a_i^dag a_i sigma_z`` on the full layout."""
    ops = SystemOperators(params.layout)
    return params.chi_m * (ops.n(MEMORY) @ ops.sz) + params.chi_r * (ops.n(READOUT) @ ops.sz)


def stark_compensation(params: SystemParams, abar_m: complex, abar_r: complex) -> Operator:
    """``-sum_i chi_i |abar_i|^2 sigma_z``: qubit frame at the Stark-shifted frequency.

    The Rabi drive is calibrated at the qubit frequency shifted by both
    sidebands, which in the qubit's rotating frame is this static term.
    """
    shift = params.chi_m * abs(abar_m) ** 2 + params.chi_r * abs(abar_r) ** 2
    return -shift * SystemOperators(params.layout).sz


def drive_hamiltonian(
    t: float,
    params: SystemParams,
    drives: DriveParams,
    rabi_envelope: float = 1.0,
    sideband_envelope: tuple[float, float] = (1.0, 1.0),
) -> Operator:
    """Rabi plus sideband drives at time ``t`` in the rotating-lab frame.

    ``(Omega_R/2) sigma_x + sum_i (eps_i a_i^dag e^{-i D_i t} + h.c.)``; the
    envelope factors scale each channel.
    """
    ops = SystemOperators(params.layout)
    h = (0.5 * params.omega_rabi * drives.rabi * rabi_envelope) * ops.sx
    for slot, env in zip((MEMORY, READOUT), sideband_envelope):
        eps = drives.eps(slot) * env
        if eps == 0:
            continue
        phase = np.exp(-1j * drives.detuning(params, slot) * t)
        a = ops.a(slot)
        h = h + (eps * phase) * a.dag() + (np.conj(eps) * np.conj(phase)) * a
    return h.with_frame(str(FrameTag.ROTATING_LAB))


def lab_hamiltonian(
    params: SystemParams,
    drives: DriveParams,
    rabi_envelope: Coefficient | None = None,
    sideband_envelopes: tuple[Coefficient | None, Coefficient | None] = (None, None),
    stark_compensate: bool = True,
) -> Hamiltonian:
    """Time-dependent rotating-lab-frame Hamiltonian (dispersive + drives).

    Envelopes default to constant 1.  The Stark compensation uses the full
    steady amplitudes, i.e. the Rabi drive frequency is fixed.
    """
    frame = str(FrameTag.ROTATING_LAB)
    ops = SystemOperators(params.layout)
    static = dispersive_hamiltonian(params)
    if stark_compensate:
        static = static + stark_compensation(params, drives.abar(params, MEMORY), drives.abar(params, READOUT))
    terms: list = [(static.with_frame(frame), None)]
    rabi = (0.5 * params.omega_rabi * drives.rabi) * ops.sx.with_frame(frame)
    terms.append((rabi, rabi_envelope))
    for slot, env in zip((MEMORY, READOUT), sideband_envelopes):
        eps = drives.eps(slot)
        if eps == 0:
            continue
        det = drives.detuning(params, slot)
        env = env or (lambda t: 1.0)
        a = ops.a(slot).with_frame(frame)
        terms.append((a.dag(), lambda t, e=eps, d=det, f=env: e * f(t) * np.exp(-1j * d * t)))
        terms.append((a, lambda t, e=eps, d=det, f=env: np.conj(e) * f(t) * np.exp(1j * d * t)))
    return Hamiltonian(FrameTag.ROTATING_LAB, tuple(terms))


def displaced_hamiltonian(
    params: SystemParams,
    betas: tuple[Coefficient, Coefficient],
    abar_m: complex,
    abar_r: complex,
    rabi_envelope: Coefficient | None = None,
    stark_compensate: bool = True,
) -> Hamiltonian:
    """Displaced-rotating-frame Hamiltonian for classical trajectories ``betas``.

    With ``beta_i(t)`` solving the driven, damped classical equation the
    drive and damping terms cancel, leaving
    ``sum_i chi_i (n_i + beta_i^* a_i + beta_i a_i^dag + |beta_i|^2) sigma_z
    + (Omega_R/2) sigma_x`` plus the Stark compensation.
    """
    frame = str(FrameTag.DISPLACED_ROTATING)
    ops = SystemOperators(params.layout)
    static = dispersive_hamiltonian(params)
    if stark_compensate:
        static = static + stark_compensation(params, abar_m, abar_r)
    terms: list = [(static.with_frame(frame), None)]
    terms.append(((0.5 * params.omega_rabi) * ops.sx.with_frame(frame), rabi_envelope))
    sz = ops.sz.with_frame(frame)
    for slot, beta in zip((MEMORY, READOUT), betas):
        if beta is None:
            continue
        chi = params.chi(slot)
        a = ops.a(slot).with_frame(frame)
        terms.append(((chi * a.dag()) @ sz, lambda t, b=beta: b(t)))
        terms.append(((chi * a) @ sz, lambda t, b=beta: np.conj(b(t))))
        terms.append((chi * sz, lambda t, b=beta: abs(b(t)) ** 2))
    return Hamiltonian(FrameTag.DISPLACED_ROTATING, tuple(terms))


def jc_coupling_operator(params: SystemParams, slot: int, sign: int = -1) -> tuple[Operator, Operator]:
    """The pair ``(sigma_+ a, sigma_- a^dag)`` (or the anti-JC pair for ``sign=+1``).

    Operators are in the dressed basis of the effective frame, where the
    qubit's ``plus``/``minus`` raise/lower between ``|->`` and ``|+>``.
    """
    ops = SystemOperators(params.layout)
    a = ops.a(slot)
    if sign == -1:
        return ops.sp @ a, ops.sm @ a.dag()
    return ops.sp @ a.dag(), ops.sm @ a


def effective_jc_hamiltonian(
    params: SystemParams, abar_m: complex, abar_r: complex, signs: tuple[int, int] = (-1, -1)
) -> Operator:
    """``sum_i chi_i (abar_i^* sigma_+ a_i + abar_i sigma_- a_i^dag)`` in the dressed basis.

    For real ``abar_i`` this is ``chi_i abar_i (sigma_+ a_i + sigma_- a_i^dag)``.
    A mode driven with the opposite sideband sign couples through the
    anti-JC pair ``sigma_+ a^dag + sigma_- a`` instead.
    """
    frame = str(FrameTag.EFFECTIVE_JC)
    h = Operator(params.layout, SystemOperators(params.layout).eye.matrix * 0, frame)
    for slot, abar, sign in ((MEMORY, abar_m, signs[0]), (READOUT, abar_r, signs[1])):
        abar = complex(abar)
        if abar == 0:
            continue
        up, down = jc_coupling_operator(params, slot, sign)
        coeff = params.chi(slot) * (np.conj(abar) if sign == -1 else abar)
        h = h + (coeff * up + np.conj(coeff) * down).with_frame(frame)
    return h


def effective_hamiltonian(
    params: SystemParams,
    g_m: Coefficient,
    g_r: Coefficient,
    rabi_envelope: Coefficient | None = None,
    signs: tuple[int, int] = (-1, -1),
) -> Hamiltonian:
    """Effective-frame Hamiltonian with time-dependent couplings.

    ``g_i(t) = chi_i |beta_i(t)|`` and, during Rabi ramps, the dressed
    splitting ``Omega(t)`` differs from the sideband detuning, which enters
    as ``(Omega(t) - Omega_R)/2`` times the dressed ``sigma_z``.
    """
    frame = str(FrameTag.EFFECTIVE_JC)
    ops = SystemOperators(params.layout)
    terms: list = []
    for slot, g, sign in ((MEMORY, g_m, signs[0]), (READOUT, g_r, signs[1])):
        if g is None:
            continue
        up, down = jc_coupling_operator(params, slot, sign)
        terms.append(((up + down).with_frame(frame), g))
    if rabi_envelope is not None:
        w = params.omega_rabi
        terms.append(((0.5 * w) * ops.sz.with_frame(frame), lambda t, f=rabi_envelope: f(t) - 1.0))
    if not terms:
        terms.append((Operator(params.layout, ops.eye.matrix * 0, frame), None))
    return Hamiltonian(FrameTag.EFFECTIVE_JC, tuple(terms))


# --- frame maps ---------------------------------------------------------------------

# Rows are the dressed bras (<-|, <+|) in the bare (g, e) basis, with
# |+> = (|g> + |e>)/sqrt(2) and |-> = (|e> - |g>)/sqrt(2).  This phase choice
# makes the engineered coupling come out as +chi*abar.
DRESSED_BASIS = np.array([[-1.0, 1.0], [1.0, 1.0]], dtype=complex) / math.sqrt(2)


def _on_qubit(layout: SpaceLayout, u2: np.ndarray) -> np.ndarray:
    rest = layout.total // 2
    return np.kron(u2, np.eye(rest))


def to_dressed(rho: DensityMatrix, omega_rabi: float = 0.0, t: float = 0.0) -> DensityMatrix:
    """Bare rotating-frame qubit -> dressed basis in the Rabi interaction picture."""
    rot = _rabi_rotation(omega_rabi, t)
    return rho.transform(_on_qubit(rho.layout, DRESSED_BASIS @ rot))


def from_dressed(rho: DensityMatrix, omega_rabi: float = 0.0, t: float = 0.0) -> DensityMatrix:
    rot = _rabi_rotation(omega_rabi, t)
    u = DRESSED_BASIS @ rot
    return rho.transform(_on_qubit(rho.layout, u.conj().T))


def _rabi_rotation(omega_rabi: float, t: float) -> np.ndarray:
    # exp(+i Omega t sigma_x / 2)
    c, s = math.cos(omega_rabi * t / 2), math.sin(omega_rabi * t / 2)
    return np.array([[c, 1j * s], [1j * s, c]], dtype=complex)


def dressed_ket(which: str) -> np.ndarray:
    """Bare-basis ket of the dressed state ``'+'`` or ``'-'``."""
    return DRESSED_BASIS[{"-": 0, "+": 1}[which]].conj()


def half_pi_gate() -> np.ndarray:
    """The closing pi/2 pulse: a y rotation taking ``|->`` to ``|g>`` and ``|+>`` to ``|e>``.

    Acts on the bare (g, e) basis; phases are dropped.
    """
    return np.array([[1.0, -1.0], [1.0, 1.0]], dtype=complex) / math.sqrt(2)


def displaced_frame_map(
    rho: DensityMatrix,
    abar_m: complex,
    abar_r: complex,
    t: float,
    detuning_m: float,
    detuning_r: float,
    inverse: bool = False,
) -> DensityMatrix:
    """Apply ``U(t) = D_m(-beta_m(t)) D_r(-beta_r(t))``, ``beta_i = abar_i e^{-i D_i t}``.

    ``inverse=True`` applies ``U(t)^dag``.  Uses the matrix-exponential
    displacement, so it warns when the cutoff is too small for ``abar``.
    """
    layout = rho.layout
    sign = 1.0 if inverse else -1.0
    u = np.eye(layout.total, dtype=complex)
    for slot, abar, det in ((MEMORY, abar_m, detuning_m), (READOUT, abar_r, detuning_r)):
        beta = complex(abar) * np.exp(-1j * det * t)
        if beta == 0:
            continue
        d = displacement(sign * beta, layout.dims[slot])
        u = embed(d, layout, slot).full() @ u
    return rho.transform(u)


def classical_amplitude(
    eps: complex, detuning: float, kappa: float, envelope: Coefficient | None, t_end: float, beta0: complex = 0.0
) -> Coefficient:
    """Solve ``d beta/dt = -i eps f(t) e^{-i D t} - kappa beta/2`` on ``[0, t_end]``.

    Returns a dense-output callable; with no envelope and ``beta0`` at the
    steady value the solution is exactly ``abar e^{-i D t}`` and is returned
    in closed form.
    """
    from scipy.integrate import solve_ivp

    eps = complex(eps)
    if envelope is None:
        abar = steady_amplitude(eps, detuning, kappa)
        if abs(beta0 - abar) < 1e-15 * max(1.0, abs(abar)):
            return lambda t: abar * np.exp(-1j * detuning * t)
        envelope = lambda t: 1.0  # noqa: E731

    def rhs(t, y):
        b = y[0] + 1j * y[1]
        d = -1j * eps * envelope(t) * np.exp(-1j * detuning * t) - 0.5 * kappa * b
        return [d.real, d.imag]

    max_step = 0.05 * 2 * math.pi / max(abs(detuning), 1e-9)
    sol = solve_ivp(
        rhs, (0.0, t_end), [complex(beta0).real, complex(beta0).imag],
        method="DOP853", rtol=1e-11, atol=1e-12, dense_output=True, max_step=max_step,
    )

    def beta(t):
        y = sol.sol(min(max(t, 0.0), t_end))
        return complex(y[0], y[1])

    return beta
