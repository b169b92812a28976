"""Lindblad master-equation integration.

The Liouvillian is assembled once as sparse superoperators acting on the
row-major vectorized density matrix, ``vec(A rho B) = (A kron B^T) vec(rho)``,
split into a static part and terms with scalar time coefficients.  Any
explicit Runge-Kutta step is a polynomial in the (traceless) Liouvillian, so
the trace is preserved to rounding.

For models with a conserved excitation number (the effective frame) the
state can be restricted to a :class:`ChargeSectors` space: only entries
``rho[i, j]`` with equal charge on ``i`` and ``j`` are stored.  Phase-averaged
initial states stay in that subspace exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .hilbert import MEMORY, QUBIT, READOUT, DensityMatrix, Operator, SpaceLayout, embed, pauli
from .model import (
    DriveParams,
    FrameTag,
    Hamiltonian,
    SystemOperators,
    SystemParams,
    classical_amplitude,
    displaced_hamiltonian,
    effective_hamiltonian,
    half_pi_gate,
    lab_hamiltonian,
)
from .pulses import PulseSequence

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8


class StiffnessError(RuntimeError):
    """The adaptive integrator could not make progress."""


class SectorLeakError(ValueError):
    """A superoperator maps a charge-diagonal state out of the sector space."""


@dataclass(frozen=True)
class CollapseSet:
    """Collapse channels as ``(operator, rate)``; the dissipator is ``rate * D[op]``."""

    channels: tuple[tuple[Operator, float], ...]

    def __post_init__(self):
        for _, rate in self.channels:
            if rate < 0:
                raise ValueError(f"collapse rate must be >= 0, got {rate}")

    def __iter__(self):
        return iter(self.channels)

    def __len__(self):
        return len(self.channels)

    def scaled(self) -> list[Operator]:
        return [math.sqrt(r) * op for op, r in self.channels]

    @classmethod
    def empty(cls) -> "CollapseSet":
        return cls(())


def _mode_channels(params: SystemParams, ops: SystemOperators, frame: str) -> list:
    out = []
    nth = params.bath_occupation
    for slot in (MEMORY, READOUT):
        a = ops.a(slot).with_frame(frame)
        k = params.kappa_of(slot)
        out.append((a, k * (nth + 1.0)))
        if nth > 0:
            out.append((a.dag(), k * nth))
    return out


def collapse_operators(params: SystemParams, frame: FrameTag = FrameTag.DISPLACED_ROTATING) -> CollapseSet:
    """Mode decay, qubit relaxation and pure dephasing in the bare qubit basis.

    Channels: ``kappa_m D[a_m]``, ``kappa_r D[a_r]``, ``(1/T1) D[sigma_-]`` and
    ``(gamma_phi/2) D[sigma_z]``.  Displacing the modes leaves them unchanged.
    """
    if frame == FrameTag.EFFECTIVE_JC:
        return effective_collapse_operators(params)
    f = str(frame)
    ops = SystemOperators(params.layout)
    ch = _mode_channels(params, ops, f)
    ch.append((ops.sm.with_frame(f), 1.0 / params.t1_q))
    ch.append((ops.sz.with_frame(f), params.gamma_phi / 2))
    return CollapseSet(tuple(ch))


def effective_collapse_operators(params: SystemParams) -> CollapseSet:
    """Qubit channels rewritten in the dressed basis, secular terms only.

    Bare ``sigma_-`` splits into equal-weight dressed ``sigma_z``, ``sigma_+``
    and ``sigma_-`` parts rotating at 0 and ``+-Omega_R``; bare ``sigma_z``
    becomes ``sigma_+ + sigma_-``.  Dropping cross terms (valid for
    ``Omega_R`` much larger than the qubit rates) leaves independent channels.
    """
    f = str(FrameTag.EFFECTIVE_JC)
    ops = SystemOperators(params.layout)
    g1, gphi = 1.0 / params.t1_q, params.gamma_phi
    ch = _mode_channels(params, ops, f)
    ch.append((ops.sz.with_frame(f), g1 / 4))
    ch.append((ops.sm.with_frame(f), g1 / 4 + gphi / 2))
    ch.append((ops.sp.with_frame(f), g1 / 4 + gphi / 2))
    return CollapseSet(tuple(ch))


# --- charge sectors -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ChargeSectors:
    """Block-diagonal subspace of density matrices with equal charge on both indices."""

    layout: SpaceLayout
    charges: np.ndarray
    rows: np.ndarray = field(init=False)
    cols: np.ndarray = field(init=False)
    keys: np.ndarray = field(init=False)

    def __post_init__(self):
        q = np.asarray(self.charges)
        order = np.argsort(q, kind="stable")
        rows, cols = [], []
        for c in np.unique(q):
            idx = order[q[order] == c]
            r, cc = np.meshgrid(idx, idx, indexing="ij")
            rows.append(r.ravel())
            cols.append(cc.ravel())
        rows = np.concatenate(rows).astype(np.int64)
        cols = np.concatenate(cols).astype(np.int64)
        keys = rows * self.layout.total + cols
        srt = np.argsort(keys)
        object.__setattr__(self, "charges", q)
        object.__setattr__(self, "rows", rows[srt])
        object.__setattr__(self, "cols", cols[srt])
        object.__setattr__(self, "keys", keys[srt])

    @classmethod
    def excitation_number(cls, layout: SpaceLayout, signs: tuple[int, int] = (-1, -1)) -> "ChargeSectors":
        """Charge conserved by the effective couplings: ``q - s_m n_m - s_r n_r``."""
        q, m, r = np.meshgrid(*(np.arange(d) for d in layout.dims), indexing="ij")
        return cls(layout, (q - signs[0] * m - signs[1] * r).ravel())

    @property
    def size(self) -> int:
        return self.keys.size

    def positions(self, rows, cols, strict=True) -> np.ndarray:
        k = np.asarray(rows, dtype=np.int64) * self.layout.total + np.asarray(cols, dtype=np.int64)
        pos = np.searchsorted(self.keys, k)
        pos = np.minimum(pos, self.size - 1)
        ok = self.keys[pos] == k
        if strict and not ok.all():
            raise SectorLeakError("entries outside the charge sectors")
        return np.where(ok, pos, -1)

    def pack(self, rho: DensityMatrix | np.ndarray, tol: float = 1e-12) -> np.ndarray:
        m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
        mask = np.ones(m.shape, bool)
        mask[self.rows, self.cols] = False
        if np.abs(m[mask]).max(initial=0.0) > tol:
            raise SectorLeakError("state has coherences between charge sectors")
        return m[self.rows, self.cols].astype(complex)

    def pack_product(self, *factors) -> np.ndarray:
        """Pack ``rho_q (x) rho_m (x) rho_r`` without forming the full matrix.

        Raises :class:`SectorLeakError` if the product has weight outside the
        sectors.
        """
        mats = [f.matrix if isinstance(f, DensityMatrix) else np.asarray(f, dtype=complex) for f in factors]
        dims = self.layout.dims
        if tuple(m.shape[0] for m in mats) != dims:
            raise ValueError(f"factor dims {[m.shape[0] for m in mats]} do not match layout {dims}")
        ri = np.unravel_index(self.rows, dims)
        ci = np.unravel_index(self.cols, dims)
        vec = np.ones(self.size, dtype=complex)
        for s, m in enumerate(mats):
            vec = vec * m[ri[s], ci[s]]
        kept = np.prod([np.real(np.trace(m)) for m in mats])
        if abs(vec[self.rows == self.cols].sum().real - kept) > 1e-12:
            raise SectorLeakError("product state has populations outside the sectors")
        # coherences across sectors are dropped only if absent
        for s, m in enumerate(mats):
            off = [(i, j) for i, j in zip(*np.nonzero(np.abs(m) > 1e-12)) if i != j]
            if off and len(mats) > 1:
                charges = self._slot_charges(s)
                if any(charges[i] != charges[j] for i, j in off):
                    raise SectorLeakError(f"factor {s} has coherences between charge sectors")
        return vec

    def _slot_charges(self, slot: int) -> np.ndarray:
        dims = self.layout.dims
        q = self.charges.reshape(dims)
        idx = [0] * len(dims)
        idx[slot] = slice(None)
        return q[tuple(idx)] - q[tuple(0 for _ in dims)]

    def unpack(self, vec: np.ndarray) -> np.ndarray:
        n = self.layout.total
        out = np.zeros((n, n), dtype=complex)
        out[self.rows, self.cols] = vec
        return out

    def superop(self, a: sp.spmatrix, b: sp.spmatrix) -> sp.csr_matrix:
        """Restriction of ``rho -> a rho b`` to the sector space."""
        a = sp.csc_matrix(a)
        b = sp.csr_matrix(b)
        i_p, j_p = self.rows, self.cols
        na = np.diff(a.indptr)[i_p]
        nb = np.diff(b.indptr)[j_p]
        per = na * nb
        total = int(per.sum())
        if total == 0:
            return sp.csr_matrix((self.size, self.size), dtype=complex)
        pair = np.repeat(np.arange(self.size), per)
        start = np.repeat(np.cumsum(per) - per, per)
        off = np.arange(total) - start
        nb_r = nb[pair]
        ea = a.indptr[i_p[pair]] + off // nb_r
        eb = b.indptr[j_p[pair]] + off % nb_r
        k, l = a.indices[ea], b.indices[eb]
        val = a.data[ea] * b.data[eb]
        tgt = self.positions(k, l, strict=False)
        bad = tgt < 0
        if bad.any():
            if np.abs(val[bad]).max() > 1e-14:
                raise SectorLeakError("superoperator does not conserve the charge")
            tgt, pair, val = tgt[~bad], pair[~bad], val[~bad]
        return sp.csr_matrix((val, (tgt, pair)), shape=(self.size, self.size))

    def expect_vector(self, op: Operator) -> np.ndarray:
        """``w`` with ``Tr(op rho) = w . vec`` for packed ``vec``."""
        m = sp.csr_matrix(op.matrix)
        # Tr(O rho) = sum_ij O_ji rho_ij
        return np.asarray(m[self.cols, self.rows]).ravel()

    def reduced(self, vec: np.ndarray, slot: int) -> np.ndarray:
        """Partial trace of a packed state onto one subsystem (dense matrix)."""
        dims = self.layout.dims
        ri = np.array(np.unravel_index(self.rows, dims))
        ci = np.array(np.unravel_index(self.cols, dims))
        others = [s for s in range(len(dims)) if s != slot]
        same = np.all(ri[others] == ci[others], axis=0)
        d = dims[slot]
        out = np.zeros((d, d), dtype=complex)
        np.add.at(out, (ri[slot][same], ci[slot][same]), vec[same])
        return out


# --- Liouvillian ----------------------------------------------------------------


def _kron_super(a: sp.spmatrix, b: sp.spmatrix) -> sp.csr_matrix:
    return sp.kron(a, sp.csr_matrix(b).T, format="csr")


@dataclass(eq=False)
class Liouvillian:
    """``L(t) = L0 + sum_k c_k(t) L_k`` on vectorized (or sector-packed) states."""

    static: sp.csr_matrix
    dynamic: list
    frame: FrameTag
    layout: SpaceLayout
    sectors: ChargeSectors | None = None
    reevaluated: list = field(default_factory=list)

    @classmethod
    def build(cls, hamiltonian: Hamiltonian, collapse: CollapseSet, sectors: ChargeSectors | None = None):
        layout = hamiltonian.layout
        n = layout.total
        eye = sp.identity(n, dtype=complex, format="csr")
        sup = (lambda a, b: sectors.superop(a, b)) if sectors is not None else _kron_super

        def commutator(h):
            return -1j * (sup(h, eye) - sup(eye, h))

        size = n * n if sectors is None else sectors.size
        static = sp.csr_matrix((size, size), dtype=complex)
        dynamic = []
        reevaluated = []
        for op, coeff in hamiltonian.terms:
            if isinstance(coeff, _Reevaluated):
                if sectors is not None:
                    raise ValueError("callable Hamiltonians are not supported with charge sectors")
                reevaluated.append(coeff.fn)
                continue
            term = commutator(op.matrix)
            if coeff is None:
                static = static + term
            else:
                dynamic.append((term.tocsr(), coeff))
        for op, rate in collapse:
            if rate == 0:
                continue
            if op.frame is not None and op.frame != str(hamiltonian.frame):
                raise ValueError(f"collapse operator in frame {op.frame!r}, Hamiltonian in {hamiltonian.frame}")
            l = op.matrix
            ldl = (l.conj().T @ l).tocsr()
            static = static + rate * (sup(l, l.conj().T) - 0.5 * sup(ldl, eye) - 0.5 * sup(eye, ldl))
        return cls(static.tocsr(), dynamic, hamiltonian.frame, layout, sectors, reevaluated)

    @property
    def size(self) -> int:
        return self.static.shape[0]

    def __call__(self, t: float, y: np.ndarray) -> np.ndarray:
        out = self.static @ y
        for mat, c in self.dynamic:
            out = out + c(t) * (mat @ y)
        if self.reevaluated:
            n = self.layout.total
            rho = y.reshape(n, n, -1) if y.ndim == 2 else y.reshape(n, n)
            for fn in self.reevaluated:
                h = fn(t).full()
                if rho.ndim == 3:
                    comm = np.einsum("ij,jkb->ikb", h, rho) - np.einsum("ijb,jk->ikb", rho, h)
                else:
                    comm = h @ rho - rho @ h
                out = out - 1j * comm.reshape(out.shape)
        return out

    def pack(self, rho: DensityMatrix) -> np.ndarray:
        if self.sectors is not None:
            return self.sectors.pack(rho)
        return np.asarray(rho.matrix, dtype=complex).ravel()

    def unpack(self, vec: np.ndarray) -> np.ndarray:
        if self.sectors is not None:
            return self.sectors.unpack(vec)
        n = self.layout.total
        return vec.reshape(n, n)

    def expect_vector(self, op: Operator) -> np.ndarray:
        if self.sectors is not None:
            return self.sectors.expect_vector(op)
        return np.asarray(op.matrix.T.toarray()).ravel()

    def trace_vector(self) -> np.ndarray:
        return self.expect_vector(Operator(self.layout, sp.identity(self.layout.total, format="csr")))

    def reduced(self, vec: np.ndarray, slot: int) -> np.ndarray:
        if self.sectors is not None:
            return self.sectors.reduced(vec, slot)
        dm = DensityMatrix(self.layout, self.unpack(vec), check=False)
        return dm.ptrace(slot).matrix


# --- integration ----------------------------------------------------------------


def integrate(
    liouvillian: Liouvillian,
    y0: np.ndarray,
    times: Sequence[float],
    tol: float = DEFAULT_TOL,
    t0: float | None = None,
    breakpoints: Sequence[float] = (),
    gates: Sequence[tuple[float, np.ndarray]] = (),
    segment_name: Callable[[float], str] | None = None,
) -> np.ndarray:
    """Integrate packed state(s) ``y0`` (shape ``(P,)`` or ``(P, k)``) to ``times``.

    Returns an array of shape ``(len(times),) + y0.shape``.  Integration is
    split at ``breakpoints`` and gate times; a gate ``(t, U)`` applies the
    superoperator-space matrix ``U`` (already lifted) at ``t``, after samples
    requested exactly at ``t``.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a non-empty 1-d sequence")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    t0 = float(times[0]) if t0 is None else float(t0)
    t_end = float(times[-1])
    shape = y0.shape
    batch = y0.ndim == 2
    p = liouvillian.size

    def rhs(t, y):
        if batch:
            return liouvillian(t, y.reshape(shape)).ravel()
        return liouvillian(t, y)

    gate_map = {float(t): u for t, u in gates}
    cuts = sorted({t0, t_end} | {b for b in breakpoints if t0 < b < t_end} | {t for t in gate_map if t0 <= t < t_end})
    out = np.empty((times.size,) + shape, dtype=complex)
    filled = np.zeros(times.size, bool)
    y = np.array(y0, dtype=complex).ravel()
    rtol, atol = tol, tol * 1e-2
    for a, b in zip(cuts[:-1], cuts[1:]):
        # samples at a gate time see the state before the gate
        at_a = np.where((times == a) & ~filled)[0]
        if at_a.size:
            out[at_a] = y.reshape(shape)
            filled[at_a] = True
        if a in gate_map:
            y = _apply_gate(gate_map[a], y, shape)
        sel = np.where((times > a) & (times <= b) & ~filled)[0]
        t_eval = np.append(times[sel], b) if not sel.size or times[sel[-1]] != b else times[sel]
        sol = solve_ivp(rhs, (a, b), y, method="DOP853", t_eval=t_eval, rtol=rtol, atol=atol)
        if sol.status < 0 or np.size(sol.t) != t_eval.size:
            # cuts fall on segment boundaries, so the start time names the segment
            where = segment_name(a) if segment_name else f"[{a:.4g}, {b:.4g}]"
            raise StiffnessError(f"integration failed in segment {where}: {sol.message}")
        if sel.size:
            out[sel] = sol.y[:, : sel.size].T.reshape((sel.size,) + shape)
            filled[sel] = True
        y = sol.y[:, -1]
    rest = np.where(~filled)[0]
    if rest.size:
        out[rest] = y.reshape(shape)
    return out


def _apply_gate(u, y: np.ndarray, shape) -> np.ndarray:
    if len(shape) == 2:
        return (u @ y.reshape(shape)).ravel()
    return u @ y


# --- trajectories -----------------------------------------------------------------


@dataclass
class Trajectory:
    """Sampled time series of observables, optionally with full states."""

    frame: FrameTag
    times: np.ndarray
    observables: dict
    states: list | None = None
    vectors: np.ndarray | None = None
    liouvillian: Liouvillian | None = field(default=None, repr=False)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.observables[name]

    def reduced(self, index: int, slot: int) -> DensityMatrix:
        """Reduced state of one subsystem at sample ``index``."""
        if self.vectors is None or self.liouvillian is None:
            raise ValueError("trajectory was run without state storage")
        m = self.liouvillian.reduced(self.vectors[index], slot)
        m = 0.5 * (m + m.conj().T)
        m = m / np.trace(m).real
        from .hilbert import SpaceLayout as _L

        d = self.liouvillian.layout.dims[slot]
        return DensityMatrix(_L((d,), (self.liouvillian.layout.labels[slot],)), m, check=False)

    def final_vector(self) -> np.ndarray:
        if self.vectors is None:
            raise ValueError("trajectory was run without state storage")
        return self.vectors[-1]


def standard_observables(layout: SpaceLayout) -> dict[str, Operator]:
    """Photon numbers and qubit Paulis; empty for layouts other than qubit-memory-readout."""
    if len(layout.dims) != 3:
        return {}
    ops = SystemOperators(layout)
    return {
        "nbar_m": ops.n(MEMORY),
        "nbar_r": ops.n(READOUT),
        "sigma_z": ops.sz,
        "sigma_x": ops.sx,
    }


def evolve(
    rho0: DensityMatrix | np.ndarray,
    hamiltonian: Hamiltonian | Callable[[float], Operator],
    collapse: CollapseSet,
    tspan: Sequence[float],
    tol: float = DEFAULT_TOL,
    *,
    sectors: ChargeSectors | None = None,
    observables: dict[str, Operator] | None = None,
    store_states: bool = False,
    sequence: PulseSequence | None = None,
    gates: Sequence[tuple[float, np.ndarray]] = (),
    liouvillian: Liouvillian | None = None,
) -> Trajectory:
    """Integrate ``drho/dt = -i[H(t), rho] + sum_k r_k D[L_k] rho``.

    ``tspan`` is either ``(t0, t1)`` or an increasing array of sample times.
    ``gates`` are ``(t, U)`` pairs with ``U`` a 2x2 unitary on the qubit,
    applied instantaneously at ``t``.  Observables are always recorded
    (``nbar_m``, ``nbar_r``, ``sigma_z``, ``sigma_x``, ``purity``, ``trace``);
    full states only with ``store_states``.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    if isinstance(hamiltonian, Operator):
        frame = FrameTag(hamiltonian.frame) if hamiltonian.frame else FrameTag.ROTATING_LAB
        hamiltonian = Hamiltonian(frame, ((hamiltonian.with_frame(str(frame)), None),))
    elif not isinstance(hamiltonian, Hamiltonian):
        hamiltonian = _wrap_callable(hamiltonian)
    liou = liouvillian or Liouvillian.build(hamiltonian, collapse, sectors)
    times = np.asarray(tspan, dtype=float)
    if times.size == 2:
        times = np.linspace(times[0], times[1], 201)
    y0 = rho0 if isinstance(rho0, np.ndarray) and rho0.ndim == 1 else liou.pack(rho0)
    lifted = []
    for t, u in gates:
        if liou.sectors is not None:
            raise ValueError("qubit gates mix charge sectors; apply them outside sector runs")
        full = np.kron(np.asarray(u), np.eye(liou.layout.total // 2))
        lifted.append((t, sp.csr_matrix(np.kron(full, full.conj()))))
    breakpoints = sequence.breakpoints() if sequence is not None else ()
    seg_name = sequence.segment_at if sequence is not None else None
    ys = integrate(liou, y0, times, tol, breakpoints=breakpoints, gates=lifted, segment_name=seg_name)
    obs = observables if observables is not None else standard_observables(liou.layout)
    return _trajectory(liou, times, ys, obs, store_states, tol)


def _trajectory(liou: Liouvillian, times, ys, obs, store_states, tol) -> Trajectory:
    records = {name: np.real(ys @ liou.expect_vector(op)) for name, op in obs.items()}
    records["trace"] = np.real(ys @ liou.trace_vector())
    records["purity"] = np.real(np.sum(np.abs(ys) ** 2, axis=1))
    states = None
    if store_states and liou.sectors is None:
        states = [DensityMatrix(liou.layout, _hermitize(liou.unpack(y)), check=False) for y in ys]
    return Trajectory(
        liou.frame, times, records, states, ys if store_states else None, liou if store_states else None,
        {"tol": tol},
    )


def _hermitize(m):
    return 0.5 * (m + m.conj().T)


def _wrap_callable(fn) -> Hamiltonian:
    """Fallback for a bare ``t -> Operator``: one dense term re-evaluated per step."""
    probe = fn(0.0)
    frame = FrameTag(probe.frame) if probe.frame else FrameTag.ROTATING_LAB
    return Hamiltonian(frame, ((probe.with_frame(str(frame)), _Reevaluated(fn)),))


class _Reevaluated:
    """Marker coefficient: the term's operator itself is ``fn(t)``."""

    def __init__(self, fn):
        self.fn = fn


# --- sequence models --------------------------------------------------------------


def sequence_hamiltonian(
    params: SystemParams,
    drives: DriveParams,
    sequence: PulseSequence,
    frame: FrameTag = FrameTag.EFFECTIVE_JC,
    stark_compensate: bool = True,
) -> Hamiltonian:
    """The Hamiltonian of ``sequence`` in the requested frame."""
    env_m = sequence.envelope("sideband_m")
    env_r = sequence.envelope("sideband_r")
    env_q = sequence.envelope("rabi")
    rabi = drives.rabi

    def rabi_env(t):
        return rabi * env_q(t)

    if frame == FrameTag.ROTATING_LAB:
        return lab_hamiltonian(params, drives, env_q, (env_m, env_r), stark_compensate)
    abar_m, abar_r = drives.abar(params, MEMORY), drives.abar(params, READOUT)
    if frame == FrameTag.DISPLACED_ROTATING:
        t_end = sequence.total_duration
        betas = []
        for slot, env in ((MEMORY, env_m), (READOUT, env_r)):
            eps = drives.eps(slot)
            if eps == 0:
                betas.append(None)
                continue
            betas.append(classical_amplitude(eps, drives.detuning(params, slot), params.kappa_of(slot), env, t_end))
        return displaced_hamiltonian(params, tuple(betas), abar_m, abar_r, rabi_env, stark_compensate)
    g_m = params.chi_m * abs(abar_m)
    g_r = params.chi_r * abs(abar_r)
    return effective_hamiltonian(
        params,
        (lambda t: g_m * env_m(t)) if g_m else None,
        (lambda t: g_r * env_r(t)) if g_r else None,
        rabi_env,
        (drives.sign_m, drives.sign_r),
    )


def sequence_gates(sequence: PulseSequence) -> list[tuple[float, np.ndarray]]:
    """``(t, U)`` pairs for :func:`evolve` from the gate segments of ``sequence``."""
    table = {"half_pi": half_pi_gate()}
    out = []
    for t, name in sequence.gate_times():
        if name not in table:
            raise ValueError(f"unknown gate {name!r}")
        out.append((t, table[name]))
    return out


def sequence_sample_times(sequence: PulseSequence, n: int = 201) -> np.ndarray:
    return np.linspace(0.0, sequence.total_duration, n)
