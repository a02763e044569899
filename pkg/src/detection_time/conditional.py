"""Conditional (no-detection-yet) evolution under the projected Hamiltonian.

Between detector ticks the undetected state evolves with
``Hbar = pibar @ H @ pibar``; the last free step before a tick uses the full
``H``. The per-tick detection probability of that state, divided by the tick
spacing, is the hazard rate fed to :mod:`detection_time.distribution`.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .linalg import (
    NORM_TOL,
    DimensionError,
    HermitianOperator,
    Projector,
    QuantumState,
    ValidationError,
    evolution_phases,
    propagator,
)

EPSILON_WARN = 0.01
GRID_TOL = 1e-9
_CHUNK = 512


class GridError(ValueError):
    """A time does not sit on the detector tick grid t = k * dt."""


class ApproximationWarning(UserWarning):
    """The small-dt expansion behind the closed-form distribution is untrustworthy."""


def conditional_hamiltonian(h: HermitianOperator, pi: Projector) -> HermitianOperator:
    if h.dim != pi.dim:
        raise DimensionError(f"H has dimension {h.dim}, projector {pi.dim}")
    return HermitianOperator(pi.complement().sandwich(h.matrix))


def validity_epsilon(h: HermitianOperator, psi: QuantumState, dt: float) -> float:
    """1 - |<psi|exp(-i H dt)|psi>|, the smallness parameter of the tick expansion."""
    vals, vecs = h.eigh
    c = vecs.conj().T @ psi.amplitudes
    overlap = np.sum(np.abs(c) ** 2 * evolution_phases(vals, dt))
    return float(max(1.0 - abs(overlap), 0.0))


def grid_index(t: float, dt: float) -> int:
    """Integer k with t == k*dt; raises GridError otherwise (no snapping)."""
    k = round(t / dt)
    if abs(k * dt - t) > GRID_TOL * max(1.0, abs(t)):
        raise GridError(f"t={t!r} is not on the grid of spacing dt={dt!r}")
    return int(k)


@dataclass(frozen=True)
class HazardSeries:
    """Per-tick detection probabilities p_k and hazard w_k = p_k / dt on a uniform grid."""

    times: np.ndarray
    w: np.ndarray
    p: np.ndarray
    dt: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        w = np.asarray(self.w, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if not (times.shape == w.shape == p.shape) or times.ndim != 1:
            raise DimensionError("times, w and p must be 1-d arrays of equal length")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        for a in (times, w, p):
            a.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "p", p)

    @classmethod
    def from_rate(cls, times, w, dt: float) -> "HazardSeries":
        """Wrap an externally sampled hazard rate (e.g. an analytic model)."""
        w = np.asarray(w, dtype=float)
        return cls(np.asarray(times, dtype=float), w, w * dt, dt)

    def __len__(self) -> int:
        return self.times.size


@dataclass(frozen=True, eq=False)
class ConditionalEvolution:
    h: HermitianOperator
    pi: Projector
    psi0: QuantumState
    dt: float

    def __post_init__(self):
        if not isinstance(self.h, HermitianOperator):
            object.__setattr__(self, "h", HermitianOperator(self.h))
        if not isinstance(self.psi0, QuantumState):
            object.__setattr__(self, "psi0", QuantumState(self.psi0))
        if not (self.h.dim == self.pi.dim == self.psi0.dim):
            raise DimensionError(
                f"H ({self.h.dim}), projector ({self.pi.dim}) and psi0 ({self.psi0.dim}) disagree"
            )
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.psi0.is_normalized():
            raise ValidationError("psi0 must be normalized")
        leak = self.pi.weight(self.psi0.amplitudes)
        if np.sqrt(leak) > NORM_TOL:
            raise ValidationError(
                f"psi0 has weight {leak:.3e} inside the detected subspace; it must start undetected"
            )

    @cached_property
    def hbar(self) -> HermitianOperator:
        return conditional_hamiltonian(self.h, self.pi)

    @cached_property
    def step(self):
        return propagator(self.h, self.dt)

    @cached_property
    def _detect_factor(self) -> np.ndarray:
        # rows of pi @ U in an orthonormal basis of range(pi), expressed in Hbar's eigenbasis
        _, vecs = self.hbar.eigh
        r = self.pi.range_basis
        return (r.conj().T @ self.step.matrix) @ vecs

    @cached_property
    def _coeffs(self) -> np.ndarray:
        _, vecs = self.hbar.eigh
        return vecs.conj().T @ self.psi0.amplitudes

    @property
    def epsilon(self) -> float:
        return validity_epsilon(self.h, self.psi0, self.dt)

    def check_validity(self, threshold: float = EPSILON_WARN) -> float:
        eps = self.epsilon
        if eps > threshold:
            warnings.warn(
                f"validity epsilon {eps:.3e} exceeds {threshold:g}; dt is too coarse for the closed form",
                ApproximationWarning,
                stacklevel=2,
            )
        return eps

    def undetected_state(self, t: float) -> QuantumState:
        """exp(-i Hbar t) psi0, the conditional state between ticks."""
        vals, vecs = self.hbar.eigh
        return QuantumState(vecs @ (evolution_phases(vals, t) * self._coeffs), self.psi0.basis_label)

    def conditional_state(self, t: float) -> QuantumState:
        """exp(-i H dt) exp(-i Hbar (t - dt)) psi0 at a tick time t = k*dt, k >= 1."""
        k = grid_index(t, self.dt)
        if k < 1:
            raise GridError("conditional_state needs t = k*dt with k >= 1")
        pre = self.undetected_state((k - 1) * self.dt)
        return QuantumState(self.step.matrix @ pre.amplitudes, pre.basis_label)

    def undetected_states(self, ks) -> np.ndarray:
        """Columns exp(-i Hbar (k-1) dt) psi0 for each tick index in ``ks``."""
        vals, vecs = self.hbar.eigh
        s = (np.asarray(ks, dtype=float) - 1.0) * self.dt
        return vecs @ (evolution_phases(vals, s) * self._coeffs[:, None])

    def detection_probabilities(self, ks) -> np.ndarray:
        """<psi_c(t_k)|pi|psi_c(t_k)> for each tick index in ``ks``."""
        vals, _ = self.hbar.eigh
        ks = np.asarray(ks, dtype=float)
        out = np.empty(ks.size)
        for start in range(0, ks.size, _CHUNK):
            s = (ks[start:start + _CHUNK] - 1.0) * self.dt
            amps = self._detect_factor @ (evolution_phases(vals, s) * self._coeffs[:, None])
            out[start:start + _CHUNK] = np.sum(np.abs(amps) ** 2, axis=0)
        return np.clip(out, 0.0, 1.0)

    def hazard_series(self, n_steps: int) -> HazardSeries:
        return hazard_series(self, n_steps)


def conditional_state(ce: ConditionalEvolution, t: float) -> QuantumState:
    return ce.conditional_state(t)


def hazard_series(ce: ConditionalEvolution, n_steps: int) -> HazardSeries:
    """Hazard at ticks t_k = k*dt for k = 1..n_steps, reusing one eigendecomposition of Hbar."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    ks = np.arange(1, n_steps + 1)
    p = ce.detection_probabilities(ks)
    return HazardSeries(ks * ce.dt, p / ce.dt, p, ce.dt)
