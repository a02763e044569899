"""Dense finite-dimensional linear algebra for states, Hamiltonians and projectors.

Everything works in units with hbar = 1. Objects are immutable once built;
the underlying arrays are flagged read-only so they can be shared freely.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np

HERMITIAN_TOL = 1e-10
IDEMPOTENT_TOL = 1e-9
UNITARY_TOL = 1e-9
NORM_TOL = 1e-10
COLLAPSE_FLOOR = 1e-14


class DimensionError(ValueError):
    """Operands have incompatible dimensions or indices fall outside the basis."""


class ValidationError(ValueError):
    """An operator or state violates its structural invariant."""


class AnnihilatedState(ArithmeticError):
    """An operator maps the state to (numerically) zero norm."""

    def __init__(self, norm_sq: float):
        super().__init__(f"squared norm {norm_sq:.3e} is below the collapse floor {COLLAPSE_FLOOR:g}")
        self.norm_sq = norm_sq


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class QuantumState:
    amplitudes: np.ndarray
    basis_label: str = "site"

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size < 1:
            raise DimensionError("a state needs at least one amplitude")
        object.__setattr__(self, "amplitudes", _frozen(amps))

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalize(self) -> "QuantumState":
        n = self.norm
        if n**2 <= COLLAPSE_FLOOR:
            raise AnnihilatedState(n**2)
        return QuantumState(self.amplitudes / n, self.basis_label)

    def is_normalized(self, tol: float = NORM_TOL) -> bool:
        return abs(self.norm - 1.0) <= tol

    def vdot(self, other: "QuantumState") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.amplitudes, dtype=dtype)


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    """Dense Hermitian matrix with a lazily cached eigendecomposition."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"expected a square matrix, got shape {m.shape}")
        dev = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
        if dev > HERMITIAN_TOL:
            raise ValidationError(f"matrix is not Hermitian (max |M - M^dag| = {dev:.3e})")
        object.__setattr__(self, "matrix", _frozen(m))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        # symmetrize so round-off asymmetry never leaks into the spectrum
        m = 0.5 * (self.matrix + self.matrix.conj().T)
        vals, vecs = np.linalg.eigh(m)
        vals.setflags(write=False)
        vecs.setflags(write=False)
        return vals, vecs

    @cached_property
    def fingerprint(self) -> str:
        return hashlib.sha1(np.ascontiguousarray(self.matrix).tobytes()).hexdigest()

    def expectation(self, psi: QuantumState) -> float:
        _check_dims(self.dim, psi.dim)
        v = psi.amplitudes
        return float(np.real(np.vdot(v, self.matrix @ v)))

    def __add__(self, other):
        if isinstance(other, HermitianOperator):
            return HermitianOperator(self.matrix + other.matrix)
        return HermitianOperator(self.matrix + float(other) * np.eye(self.dim))

    def __mul__(self, c: float):
        return HermitianOperator(float(c) * self.matrix)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class Projector:
    """Orthogonal projector, stored either as a diagonal 0/1 mask or a dense matrix.

    Mask projectors are exact (0/1 diagonal); a dense matrix is checked for
    Hermiticity and idempotency on construction.
    """

    mask: np.ndarray | None = None
    dense: np.ndarray | None = None

    def __post_init__(self):
        if (self.mask is None) == (self.dense is None):
            raise ValueError("give exactly one of mask or dense")
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=bool).reshape(-1).copy()
            m.setflags(write=False)
            object.__setattr__(self, "mask", m)
            return
        p = np.asarray(self.dense, dtype=complex)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise DimensionError(f"expected a square matrix, got shape {p.shape}")
        herm = np.max(np.abs(p - p.conj().T)) if p.size else 0.0
        if herm > HERMITIAN_TOL:
            raise ValidationError(f"projector is not Hermitian (deviation {herm:.3e})")
        idem = np.max(np.abs(p @ p - p)) if p.size else 0.0
        if idem > IDEMPOTENT_TOL:
            raise ValidationError(f"projector is not idempotent (|P^2 - P| = {idem:.3e})")
        object.__setattr__(self, "dense", _frozen(p))

    @property
    def dim(self) -> int:
        return self.mask.size if self.mask is not None else self.dense.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return self.mask is not None

    @cached_property
    def matrix(self) -> np.ndarray:
        if self.mask is not None:
            return _frozen(np.diag(self.mask.astype(complex)))
        return self.dense

    @cached_property
    def range_basis(self) -> np.ndarray:
        """Orthonormal columns spanning the projector's range (N x rank)."""
        if self.mask is not None:
            basis = np.eye(self.dim, dtype=complex)[:, self.mask]
        else:
            vals, vecs = np.linalg.eigh(0.5 * (self.dense + self.dense.conj().T))
            basis = vecs[:, vals > 0.5]
        basis.setflags(write=False)
        return basis

    @property
    def rank(self) -> int:
        return int(self.mask.sum()) if self.mask is not None else self.range_basis.shape[1]

    def complement(self) -> "Projector":
        if self.mask is not None:
            return Projector(mask=~self.mask)
        return Projector(dense=np.eye(self.dim) - self.dense)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Apply to a vector or to the columns of a matrix."""
        if self.mask is not None:
            m = self.mask if v.ndim == 1 else self.mask[:, None]
            return np.where(m, v, 0)
        return self.dense @ v

    def sandwich(self, a: np.ndarray) -> np.ndarray:
        """Return P A P for a square matrix A."""
        if self.mask is not None:
            keep = self.mask.astype(float)
            return a * np.outer(keep, keep)
        return self.dense @ a @ self.dense

    def weight(self, v: np.ndarray) -> float:
        """Squared norm of the projected vector, <v|P|v>."""
        if self.mask is not None:
            return float(np.sum(np.abs(v[self.mask]) ** 2))
        return float(np.linalg.norm(self.range_basis.conj().T @ v) ** 2)


@dataclass(frozen=True, eq=False)
class UnitaryPropagator:
    matrix: np.ndarray
    generator_hash: str = ""

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen(self.matrix))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def unitarity_defect(self) -> float:
        u = self.matrix
        return float(np.max(np.abs(u.conj().T @ u - np.eye(self.dim))))

    def __matmul__(self, other):
        if isinstance(other, UnitaryPropagator):
            return UnitaryPropagator(self.matrix @ other.matrix)
        if isinstance(other, QuantumState):
            return QuantumState(self.matrix @ other.amplitudes, other.basis_label)
        return self.matrix @ other


def _check_dims(*dims: int) -> None:
    if len(set(dims)) != 1:
        raise DimensionError(f"dimension mismatch: {dims}")


def make_projector(region: Iterable[int], n: int) -> Projector:
    """Diagonal projector onto the basis indices in ``region``.

    >>> make_projector({1}, 3).mask
    array([False,  True, False])
    """
    idx = np.fromiter((int(i) for i in region), dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise DimensionError(f"region indices must lie in [0, {n - 1}]")
    mask = np.zeros(n, dtype=bool)
    mask[idx] = True
    return Projector(mask=mask)


def evolution_phases(vals: np.ndarray, t) -> np.ndarray:
    """exp(-i E t) for every eigenvalue; ``t`` may be an array (returns N x len(t))."""
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        return np.exp(-1j * vals * t)
    return np.exp(-1j * np.outer(vals, t))


def propagator(h: HermitianOperator, t: float) -> UnitaryPropagator:
    """exp(-i H t) from the cached spectral decomposition of ``h``."""
    if not isinstance(h, HermitianOperator):
        h = HermitianOperator(h)
    vals, vecs = h.eigh
    u = (vecs * evolution_phases(vals, t)) @ vecs.conj().T
    return UnitaryPropagator(u, f"{h.fingerprint}:{float(t)!r}")


def apply_and_norm(a, psi: QuantumState) -> tuple[QuantumState, float]:
    """Apply ``a`` to ``psi`` and renormalize, returning the new state and ``|a psi|^2``.

    Raises AnnihilatedState when the squared norm falls below COLLAPSE_FLOOR;
    whether that means certain detection or a dead branch is the caller's call.
    """
    if isinstance(a, Projector):
        _check_dims(a.dim, psi.dim)
        out = a.apply(psi.amplitudes)
    else:
        m = getattr(a, "matrix", a)
        m = np.asarray(m)
        _check_dims(m.shape[1], psi.dim)
        out = m @ psi.amplitudes
    n2 = float(np.real(np.vdot(out, out)))
    if n2 <= COLLAPSE_FLOOR:
        raise AnnihilatedState(n2)
    return QuantumState(out / np.sqrt(n2), psi.basis_label), n2


def energy_uncertainty(h: HermitianOperator, psi: QuantumState) -> float:
    """Standard deviation of ``h`` in ``psi``; tiny negative variances clamp to zero."""
    _check_dims(h.dim, psi.dim)
    # centre first so the variance is not a difference of two large numbers
    mean = h.expectation(psi)
    dv = h.matrix @ psi.amplitudes - mean * psi.amplitudes
    var = float(np.real(np.vdot(dv, dv)))
    return float(np.sqrt(max(var, 0.0)))
