"""Detection-time density from a hazard series, and the quantities derived from it.

Given the hazard w(t) on the tick grid, the cumulative hazard u is the
trapezoidal integral of w, the survival is exp(-u) and the density is
w * exp(-u). Nothing is renormalized: mass beyond the horizon stays in ``tail``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .conditional import ConditionalEvolution, HazardSeries
from .linalg import evolution_phases

SINGULAR_SURVIVAL = 1e-12
CERTAIN_TAIL = 1e-6


def _cumtrapz(y: np.ndarray, dx: float) -> np.ndarray:
    out = np.zeros_like(y, dtype=float)
    if y.size > 1:
        out[1:] = np.cumsum(0.5 * dx * (y[1:] + y[:-1]))
    return out


def _trapz(y: np.ndarray, dx: float) -> float:
    if y.size < 2:
        return 0.0
    return float(dx * (np.sum(y) - 0.5 * (y[0] + y[-1])))


@dataclass(frozen=True)
class DetectionDistribution:
    times: np.ndarray
    w: np.ndarray
    u: np.ndarray
    density: np.ndarray
    survival: np.ndarray
    total: float
    tail: float
    dt: float
    # grid points where survival < 1e-12; w there is capped for reporting
    singular: np.ndarray

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def at_ticks(self, times: np.ndarray) -> np.ndarray:
        """Indices of the given tick times in this grid."""
        idx = np.rint(np.asarray(times) / self.dt).astype(int) - int(np.rint(self.times[0] / self.dt))
        return idx


def build_distribution(hs: HazardSeries, t_max: float | None = None) -> DetectionDistribution:
    """Assemble u, survival and density from a hazard series on its uniform grid.

    A series that starts at the first tick (t = dt) is extended to t = 0 by
    holding the first hazard value, so that u(0) = 0 and u(k dt) for constant w
    is exactly k w dt.
    """
    dt = hs.dt
    times, w = hs.times, hs.w
    if t_max is not None:
        keep = times <= t_max + 1e-9 * max(1.0, t_max)
        times, w = times[keep], w[keep]
        if times.size == 0 or times[-1] < t_max - dt * (1 + 1e-9):
            raise ValueError(f"hazard series ends at {hs.times[-1]!r}, before t_max={t_max!r}")
    if times.size == 0:
        raise ValueError("empty hazard series")
    if np.any(w < 0) or np.any(np.isnan(w)):
        raise ValueError("hazard rate must be non-negative")
    if times.size > 1 and not np.allclose(np.diff(times), dt, rtol=1e-6, atol=1e-12 * dt):
        raise ValueError("hazard series must be sampled on a uniform grid of spacing dt")
    if times[0] > 0.5 * dt:
        if abs(times[0] - dt) > 1e-9 * dt:
            raise ValueError("hazard series must start at t = 0 or t = dt")
        times = np.concatenate(([0.0], times))
        w = np.concatenate(([w[0]], w))

    with np.errstate(over="ignore", invalid="ignore"):
        u = _cumtrapz(w, dt)
        survival = np.exp(-u)
        density = w * survival
    density = np.where(np.isfinite(density), density, 0.0)
    singular = survival < SINGULAR_SURVIVAL
    w_reported = w.copy()
    if singular.any() and (~singular).any():
        w_reported[singular] = np.minimum(w[singular], np.max(w[~singular]))

    return DetectionDistribution(
        times=times,
        w=w_reported,
        u=u,
        density=density,
        survival=survival,
        total=_trapz(density, dt),
        tail=float(survival[-1]),
        dt=dt,
        singular=singular,
    )


@dataclass(frozen=True)
class TotalProbability:
    value: float
    certain: bool

    def __float__(self) -> float:
        return self.value


def total_probability(dd: DetectionDistribution) -> TotalProbability:
    """1 - exp(-u(T_max)); ``certain`` when the undetected tail is below 1e-6."""
    value = float(-np.expm1(-dd.u[-1]))
    return TotalProbability(min(max(value, 0.0), 1.0), dd.tail < CERTAIN_TAIL)


@dataclass(frozen=True)
class MeanTime:
    mean: float
    conditional_mean: float | None
    total: float
    tail: float


def mean_detection_time(dd: DetectionDistribution) -> MeanTime:
    """Mean of t over the horizon, and the mean given detection (None if nothing is detected)."""
    mean = _trapz(dd.times * dd.density, dd.dt)
    cond = mean / dd.total if dd.total >= 1e-9 else None
    return MeanTime(mean, cond, dd.total, dd.tail)


def integral_equation_residual(dd: DetectionDistribution, exclude_end: float = 0.0) -> float:
    """max |P - w (1 - int_0^t P)| / max P over the grid.

    ``exclude_end`` drops that fraction of the horizon at the far end, and grid
    points flagged singular are always skipped.
    """
    cum = _cumtrapz(dd.density, dd.dt)
    r = dd.density - dd.w * (1.0 - cum)
    keep = ~dd.singular
    if exclude_end > 0:
        keep &= dd.times <= dd.times[-1] - exclude_end * (dd.times[-1] - dd.times[0])
    scale = np.max(dd.density[keep]) if keep.any() else 0.0
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(r[keep])) / scale)


@dataclass(frozen=True, eq=False)
class PovmSet:
    """State-dependent POVM elements at the tick times, plus the never-detected remainder.

    Element k is E_k = K_k^dag K_k with
    K_k = exp(-u(t_k)/2) / sqrt(dt) * pi U exp(-i Hbar (t_k - dt)).
    Each carries weight dt; ``E_bar = 1 - sum_k E_k dt``. Elements are formed on
    demand because the full stack is K x N x N.
    """

    ce: ConditionalEvolution
    times: np.ndarray
    weights: np.ndarray  # exp(-u(t_k)) / dt
    E_bar: np.ndarray

    def __len__(self) -> int:
        return self.times.size

    def kraus(self, k: int) -> np.ndarray:
        """K for the k-th tick (1-based)."""
        vals, vecs = self.ce.hbar.eigh
        w_k = (vecs * evolution_phases(vals, (k - 1) * self.ce.dt)) @ vecs.conj().T
        return np.sqrt(self.weights[k - 1]) * self.ce.pi.apply(self.ce.step.matrix @ w_k)

    def operator(self, k: int) -> np.ndarray:
        kk = self.kraus(k)
        return kk.conj().T @ kk

    def expectations(self, psi: np.ndarray | None = None) -> np.ndarray:
        """<psi|E_k|psi> for every tick; defaults to the state the POVM was built from."""
        if psi is None:
            p = self.ce.detection_probabilities(np.arange(1, len(self) + 1))
            return self.weights * p
        out = np.empty(len(self))
        for k in range(1, len(self) + 1):
            v = self.kraus(k) @ psi
            out[k - 1] = np.real(np.vdot(v, v))
        return out

    @cached_property
    def _base_min_eigenvalue(self) -> float:
        g = self.ce.step.matrix.conj().T @ self.ce.pi.apply(self.ce.step.matrix)
        return float(np.linalg.eigvalsh(0.5 * (g + g.conj().T))[0])

    def min_eigenvalues(self, direct: bool | None = None) -> np.ndarray:
        """Smallest eigenvalue of each E_k.

        Each E_k is exp(-u)/dt times a unitary conjugation of U^dag pi U, so its
        spectrum is that of U^dag pi U rescaled. With ``direct=True`` every E_k
        is formed and diagonalized instead; the default does that only for N <= 64.
        """
        if direct is None:
            direct = self.ce.h.dim <= 64
        if not direct:
            return self.weights * self._base_min_eigenvalue
        out = np.empty(len(self))
        for k in range(1, len(self) + 1):
            e = self.operator(k)
            out[k - 1] = np.linalg.eigvalsh(0.5 * (e + e.conj().T))[0]
        return out

    def resolution_defect(self) -> float:
        """|<psi0|E_bar|psi0> + sum_k <psi0|E_k|psi0> dt - 1|."""
        psi0 = self.ce.psi0.amplitudes
        ebar = float(np.real(np.vdot(psi0, self.E_bar @ psi0)))
        return abs(ebar + float(np.sum(self.expectations())) * self.ce.dt - 1.0)

    @property
    def E_bar_min_eigenvalue(self) -> float:
        """Diagnostic only: the POVM depends on psi0, so E_bar need not be positive."""
        return float(np.linalg.eigvalsh(0.5 * (self.E_bar + self.E_bar.conj().T))[0])


def povm_set(ce: ConditionalEvolution, dd: DetectionDistribution) -> PovmSet:
    ks_times = dd.times[dd.times > 0.5 * dd.dt]
    n = ks_times.size
    idx = np.searchsorted(dd.times, ks_times)
    weights = np.exp(-dd.u[idx]) / ce.dt

    # sum_k E_k dt in the eigenbasis of Hbar: G_ij * sum_k c_k exp(i (l_i - l_j) s_k)
    vals, vecs = ce.hbar.eigh
    g = vecs.conj().T @ (ce.step.matrix.conj().T @ ce.pi.apply(ce.step.matrix)) @ vecs
    acc = np.zeros_like(g)
    chunk = 1024
    for start in range(0, n, chunk):
        s = (np.arange(start, min(start + chunk, n))) * ce.dt
        ph = np.conj(evolution_phases(vals, s))  # exp(+i l s), N x chunk
        c = weights[start:start + chunk] * ce.dt
        acc += (ph * c) @ ph.conj().T
    e_sum = vecs @ (g * acc) @ vecs.conj().T
    e_bar = np.eye(ce.h.dim) - e_sum
    return PovmSet(ce, ks_times, weights, e_bar)
