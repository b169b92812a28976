"""Truncated Fock/qubit operator algebra.

Basis conventions, fixed for the whole package:

* subsystem order is (qubit, memory, readout);
* the qubit basis is (ground, excited), so ``pauli("z") = diag(-1, +1)``
  and ``pauli("minus")`` maps excited to ground;
* bosonic modes use the number basis ``|0>, |1>, ..., |dim-1>``.

Operators are stored as CSR sparse matrices, density matrices as dense
arrays.  Both are immutable value objects.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.special import gammaln, gammaincc

__all__ = [
    "QUBIT",
    "MEMORY",
    "READOUT",
    "InvalidDimensionError",
    "LayoutMismatchError",
    "FrameMismatchError",
    "TruncationWarning",
    "SpaceLayout",
    "Operator",
    "DensityMatrix",
    "default_layout",
    "annihilation",
    "creation",
    "number",
    "identity",
    "pauli",
    "embed",
    "tensor",
    "displacement",
    "coherent_amplitudes",
    "truncation_error",
    "fock_state",
    "coherent_state",
    "thermal_state",
    "thermal_populations",
    "pure_state",
    "product_state",
    "partial_trace",
    "fidelity",
]

QUBIT, MEMORY, READOUT = 0, 1, 2

# Threshold on the Fock-tail weight of a coherent state beyond the cutoff.
TRUNCATION_TOL = 1e-6


class InvalidDimensionError(ValueError):
    """A subsystem dimension or basis index is out of range."""


class LayoutMismatchError(ValueError):
    """Operands were built against different space layouts."""


class FrameMismatchError(ValueError):
    """Operands carry different frame tags."""


class TruncationWarning(UserWarning):
    """A coherent amplitude is too large for the Fock cutoff."""


@dataclass(frozen=True)
class SpaceLayout:
    """Ordered subsystem dimensions of a tensor-product space."""

    dims: tuple[int, ...]
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims:
            raise InvalidDimensionError("layout needs at least one subsystem")
        if any(d < 2 for d in dims):
            raise InvalidDimensionError(f"every subsystem dimension must be >= 2, got {dims}")
        labels = tuple(self.labels) or tuple(f"s{i}" for i in range(len(dims)))
        if len(labels) != len(dims):
            raise InvalidDimensionError("labels and dims differ in length")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "labels", labels)

    @property
    def total(self) -> int:
        return int(np.prod(self.dims))

    def __len__(self):
        return len(self.dims)

    def slot(self, label: str | int) -> int:
        if isinstance(label, (int, np.integer)):
            if not 0 <= label < len(self.dims):
                raise InvalidDimensionError(f"slot {label} out of range for {self.dims}")
            return int(label)
        return self.labels.index(label)

    def single(self, slot: int) -> "SpaceLayout":
        return SpaceLayout((self.dims[slot],), (self.labels[slot],))


def default_layout(qubit: int = 2, memory: int = 30, readout: int = 10) -> SpaceLayout:
    return SpaceLayout((qubit, memory, readout), ("qubit", "memory", "readout"))


def _single_layout(dim: int, label: str = "mode") -> SpaceLayout:
    return SpaceLayout((dim,), (label,))


@dataclass(frozen=True, eq=False)
class Operator:
    """A (possibly non-Hermitian) operator on ``layout``.

    ``frame`` is an optional tag naming the reference frame the operator is
    expressed in; arithmetic between operators with different non-None tags
    raises :class:`FrameMismatchError`.
    """

    layout: SpaceLayout
    matrix: sp.csr_matrix
    frame: str | None = None

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=complex)
        n = self.layout.total
        if m.shape != (n, n):
            raise LayoutMismatchError(f"matrix shape {m.shape} does not match layout {self.layout.dims}")
        m.eliminate_zeros()
        object.__setattr__(self, "matrix", m)

    @property
    def shape(self):
        return self.matrix.shape

    def full(self) -> np.ndarray:
        return self.matrix.toarray()

    def dag(self) -> "Operator":
        return Operator(self.layout, self.matrix.conj().T.tocsr(), self.frame)

    def with_frame(self, frame: str | None) -> "Operator":
        return Operator(self.layout, self.matrix, frame)

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        diff = self.matrix - self.matrix.conj().T
        scale = max(sp.linalg.norm(self.matrix), 1e-300)
        return sp.linalg.norm(diff) <= tol * scale if diff.nnz else True

    def _join(self, other: "Operator") -> str | None:
        if self.layout != other.layout:
            raise LayoutMismatchError(f"{self.layout.dims} vs {other.layout.dims}")
        if self.frame is not None and other.frame is not None and self.frame != other.frame:
            raise FrameMismatchError(f"cannot combine {self.frame!r} with {other.frame!r}")
        return self.frame if self.frame is not None else other.frame

    def __add__(self, other):
        if isinstance(other, Operator):
            frame = self._join(other)
            return Operator(self.layout, self.matrix + other.matrix, frame)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, Operator):
            frame = self._join(other)
            return Operator(self.layout, self.matrix - other.matrix, frame)
        return NotImplemented

    def __neg__(self):
        return Operator(self.layout, -self.matrix, self.frame)

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            return Operator(self.layout, self.matrix * complex(scalar), self.frame)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / scalar)

    def __matmul__(self, other):
        if isinstance(other, Operator):
            frame = self._join(other)
            return Operator(self.layout, self.matrix @ other.matrix, frame)
        return NotImplemented

    def commutator(self, other: "Operator") -> "Operator":
        return self @ other - other @ self

    def eigenvalues(self) -> np.ndarray:
        if self.is_hermitian():
            return scipy.linalg.eigvalsh(self.full())
        return np.sort_complex(scipy.linalg.eigvals(self.full()))

    def allclose(self, other: "Operator", atol: float = 1e-12) -> bool:
        if self.layout != other.layout:
            return False
        diff = self.matrix - other.matrix
        return not diff.nnz or abs(diff).max() <= atol


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Positive semidefinite, unit-trace state on ``layout``.

    Construction validates the invariants unless ``check=False``.
    """

    layout: SpaceLayout
    matrix: np.ndarray
    check: bool = field(default=True, repr=False)

    TRACE_TOL = 1e-9
    HERMITIAN_TOL = 1e-12
    POSITIVITY_FLOOR = -1e-9

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        n = self.layout.total
        if m.shape != (n, n):
            raise LayoutMismatchError(f"state shape {m.shape} does not match layout {self.layout.dims}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if self.check:
            self.validate()

    def validate(self):
        m = self.matrix
        tr = np.trace(m)
        if abs(tr - 1.0) > self.TRACE_TOL:
            raise ValueError(f"trace {tr} differs from 1")
        herm = np.linalg.norm(m - m.conj().T) / max(np.linalg.norm(m), 1e-300)
        if herm > self.HERMITIAN_TOL:
            raise ValueError(f"state not Hermitian (relative deviation {herm:.2e})")
        lo = np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0]
        if lo < self.POSITIVITY_FLOOR:
            raise ValueError(f"state has negative eigenvalue {lo:.3e}")

    def expect(self, op: Operator) -> complex:
        if op.layout != self.layout:
            raise LayoutMismatchError(f"{op.layout.dims} vs {self.layout.dims}")
        # Tr(O rho) = sum_ij O_ij rho_ji
        return complex((op.matrix.multiply(self.matrix.T)).sum())

    def purity(self) -> float:
        return float(np.real(np.vdot(self.matrix, self.matrix)))

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def ptrace(self, keep) -> "DensityMatrix":
        return partial_trace(self, keep)

    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.matrix)).copy()

    def transform(self, unitary: np.ndarray | Operator) -> "DensityMatrix":
        u = unitary.full() if isinstance(unitary, Operator) else np.asarray(unitary)
        m = u @ self.matrix @ u.conj().T
        return DensityMatrix(self.layout, 0.5 * (m + m.conj().T), check=self.check)


# --- single-subsystem operators ---------------------------------------------------


def _check_dim(dim: int):
    if int(dim) != dim or dim < 2:
        raise InvalidDimensionError(f"dimension must be an integer >= 2, got {dim}")


def annihilation(dim: int) -> Operator:
    """Truncated bosonic lowering operator, ``a|n> = sqrt(n)|n-1>``."""
    _check_dim(dim)
    data = np.sqrt(np.arange(1, dim, dtype=float))
    return Operator(_single_layout(dim), sp.diags(data, 1, shape=(dim, dim), format="csr"))


def creation(dim: int) -> Operator:
    return annihilation(dim).dag()


def number(dim: int) -> Operator:
    _check_dim(dim)
    return Operator(_single_layout(dim), sp.diags(np.arange(dim, dtype=float), 0, format="csr"))


def identity(dim_or_layout: int | SpaceLayout) -> Operator:
    layout = dim_or_layout if isinstance(dim_or_layout, SpaceLayout) else _single_layout(dim_or_layout)
    return Operator(layout, sp.identity(layout.total, dtype=complex, format="csr"))


_PAULI = {
    "x": [[0, 1], [1, 0]],
    "y": [[0, -1j], [1j, 0]],
    "z": [[-1, 0], [0, 1]],
    # sigma_minus |e> = |g>  with basis (g, e)
    "minus": [[0, 1], [0, 0]],
    "plus": [[0, 0], [1, 0]],
}


def pauli(which: str) -> Operator:
    """Qubit operator in the (ground, excited) basis.

    ``which`` is one of ``x, y, z, plus, minus``; ``plus``/``minus`` follow
    ``sigma_pm = (sigma_x -/+ i sigma_y) / 2``.
    """
    try:
        mat = _PAULI[which]
    except KeyError:
        raise ValueError(f"unknown Pauli operator {which!r}") from None
    return Operator(_single_layout(2, "qubit"), sp.csr_matrix(np.array(mat, dtype=complex)))


def embed(op: Operator, layout: SpaceLayout, slot: int | str) -> Operator:
    """Tensor ``op`` into ``layout`` at ``slot``, identities elsewhere."""
    slot = layout.slot(slot)
    if op.layout.total != layout.dims[slot]:
        raise LayoutMismatchError(
            f"operator dimension {op.layout.total} does not match slot {slot} of {layout.dims}"
        )
    factors = [sp.identity(d, dtype=complex, format="csr") for d in layout.dims]
    factors[slot] = op.matrix
    mat = reduce(lambda a, b: sp.kron(a, b, format="csr"), factors)
    return Operator(layout, mat, op.frame)


def tensor(*ops: Operator, labels: Sequence[str] = ()) -> Operator:
    dims = tuple(d for op in ops for d in op.layout.dims)
    mat = reduce(lambda a, b: sp.kron(a, b, format="csr"), [op.matrix for op in ops])
    return Operator(SpaceLayout(dims, tuple(labels)), mat)


# --- displacement and coherent states ----------------------------------------------


def truncation_error(alpha: complex, dim: int) -> float:
    """Weight of the coherent state ``|alpha>`` beyond Fock level ``dim - 1``."""
    mu = abs(alpha) ** 2
    if mu == 0.0:
        return 0.0
    # P(N >= dim) for N ~ Poisson(mu) is the regularized lower gamma P(dim, mu).
    return float(1.0 - gammaincc(dim, mu))


def _warn_truncation(alpha: complex, dim: int):
    err = truncation_error(alpha, dim)
    if err > TRUNCATION_TOL:
        warnings.warn(
            f"|alpha|^2 = {abs(alpha) ** 2:.3g} leaves weight {err:.2e} beyond cutoff {dim}",
            TruncationWarning,
            stacklevel=3,
        )


def displacement(alpha: complex, dim: int) -> Operator:
    """``exp(alpha a^dag - alpha^* a)`` on the truncated space.

    Uses scaling-and-squaring (``scipy.linalg.expm``).  The result is exactly
    unitary up to rounding, but its action near the cutoff is distorted; a
    :class:`TruncationWarning` is emitted when the coherent state loses more
    than 1e-6 of its weight beyond the cutoff.
    """
    _check_dim(dim)
    alpha = complex(alpha)
    if alpha == 0:
        return identity(dim)
    _warn_truncation(alpha, dim)
    a = annihilation(dim).full()
    gen = alpha * a.conj().T - np.conj(alpha) * a
    return Operator(_single_layout(dim), scipy.linalg.expm(gen))


def coherent_amplitudes(alpha: complex, dim: int) -> np.ndarray:
    """Closed-form Fock amplitudes ``exp(-|alpha|^2/2) alpha^n / sqrt(n!)``."""
    _check_dim(dim)
    alpha = complex(alpha)
    n = np.arange(dim)
    if alpha == 0:
        out = np.zeros(dim, dtype=complex)
        out[0] = 1.0
        return out
    logmag = -0.5 * abs(alpha) ** 2 + n * np.log(abs(alpha)) - 0.5 * gammaln(n + 1)
    return np.exp(logmag) * np.exp(1j * n * np.angle(alpha))


# --- states ------------------------------------------------------------------------


def pure_state(ket: np.ndarray, layout: SpaceLayout | None = None) -> DensityMatrix:
    ket = np.asarray(ket, dtype=complex)
    ket = ket / np.linalg.norm(ket)
    layout = layout or _single_layout(ket.size)
    return DensityMatrix(layout, np.outer(ket, ket.conj()))


def fock_state(n: int, dim: int) -> DensityMatrix:
    _check_dim(dim)
    if not 0 <= n < dim:
        raise InvalidDimensionError(f"Fock level {n} outside truncation {dim}")
    m = np.zeros((dim, dim), dtype=complex)
    m[n, n] = 1.0
    return DensityMatrix(_single_layout(dim), m)


def coherent_state(alpha: complex, dim: int, method: str = "closed") -> DensityMatrix:
    """``|alpha><alpha|`` either from closed-form amplitudes or ``D(alpha)|0>``.

    The closed form is renormalized over the kept levels.
    """
    if method == "closed":
        _warn_truncation(alpha, dim)
        ket = coherent_amplitudes(alpha, dim)
    elif method == "expm":
        ket = displacement(alpha, dim).full()[:, 0]
    else:
        raise ValueError(f"unknown method {method!r}")
    return pure_state(ket)


def thermal_populations(nbar: float, dim: int) -> np.ndarray:
    if nbar < 0:
        raise ValueError("thermal occupation must be non-negative")
    _check_dim(dim)
    if nbar == 0:
        p = np.zeros(dim)
        p[0] = 1.0
        return p
    ratio = nbar / (nbar + 1.0)
    p = ratio ** np.arange(dim)
    return p / p.sum()


def thermal_state(nbar: float, dim: int) -> DensityMatrix:
    """Geometric photon distribution, renormalized over ``dim`` levels."""
    return DensityMatrix(_single_layout(dim), np.diag(thermal_populations(nbar, dim)).astype(complex))


def product_state(*states: DensityMatrix, labels: Sequence[str] = ()) -> DensityMatrix:
    dims = tuple(d for s in states for d in s.layout.dims)
    labels = tuple(labels) or tuple(l for s in states for l in s.layout.labels)
    mat = reduce(np.kron, [s.matrix for s in states])
    return DensityMatrix(SpaceLayout(dims, labels), mat)


def partial_trace(rho: DensityMatrix, keep: int | str | Iterable[int]) -> DensityMatrix:
    """Reduce ``rho`` onto the subsystems in ``keep`` (kept in layout order)."""
    layout = rho.layout
    if isinstance(keep, (int, np.integer, str)):
        keep = [layout.slot(keep)]
    keep = sorted({layout.slot(k) for k in keep})
    dims = layout.dims
    n = len(dims)
    t = rho.matrix.reshape(dims + dims)
    letters = "abcdefghijklmnopqrstuvwxyz"
    row = [letters[i] for i in range(n)]
    col = [letters[n + i] if i in keep else letters[i] for i in range(n)]
    out = "".join(row[i] for i in keep) + "".join(col[i] for i in keep)
    red = np.einsum("".join(row) + "".join(col) + "->" + out, t)
    kd = tuple(dims[i] for i in keep)
    sub = SpaceLayout(kd, tuple(layout.labels[i] for i in keep))
    m = red.reshape(int(np.prod(kd)), int(np.prod(kd)))
    return DensityMatrix(sub, 0.5 * (m + m.conj().T), check=rho.check)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


def fidelity(rho: DensityMatrix | np.ndarray, sigma: DensityMatrix | np.ndarray) -> float:
    """Uhlmann fidelity ``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2``."""
    a = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    b = sigma.matrix if isinstance(sigma, DensityMatrix) else np.asarray(sigma)
    s = _psd_sqrt(a)
    w = np.linalg.eigvalsh(0.5 * ((s @ b @ s) + (s @ b @ s).conj().T))
    return float(np.sum(np.sqrt(np.clip(w, 0, None))) ** 2)
