"""Exact stroboscopic measurement chain.

The system evolves for one tick with U = exp(-i H dt), then the detector
projects onto either pi (detected, experiment over) or pibar (keep going).
No small-dt expansion is made anywhere here, which is what makes this module
the reference the closed-form distribution is checked against.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    NORM_TOL,
    HermitianOperator,
    Projector,
    QuantumState,
    ValidationError,
    propagator,
)

log = logging.getLogger(__name__)

SURVIVAL_FLOOR = 1e-12
LEDGER_MAX_STEPS = 64
UNDERFLOW_GUARD = 1e-300


@dataclass(frozen=True)
class ChainResult:
    times: np.ndarray
    p_cond: np.ndarray
    p_exact: np.ndarray
    survival: np.ndarray
    dt: float
    terminated_early: bool = False
    # conditional (normalized) state after the last completed tick
    final_state: np.ndarray | None = field(default=None, repr=False)
    max_edge_weight: float = 0.0

    @property
    def total(self) -> float:
        return float(np.sum(self.p_exact))

    @property
    def tail(self) -> float:
        return float(self.survival[-1]) if self.survival.size else 1.0

    @property
    def density(self) -> np.ndarray:
        return self.p_exact / self.dt

    @property
    def mean(self) -> float:
        return float(np.sum(self.times * self.p_exact))

    @property
    def conditional_mean(self) -> float | None:
        tot = self.total
        return self.mean / tot if tot > 1e-9 else None


def _validate_start(pi: Projector, psi0: QuantumState) -> None:
    leak = pi.weight(psi0.amplitudes)
    if np.sqrt(leak) > NORM_TOL:
        raise ValidationError(
            f"psi0 has weight {leak:.3e} inside the detected subspace; it must start undetected"
        )


def run_chain(
    h: HermitianOperator,
    pi: Projector,
    psi0: QuantumState,
    dt: float,
    n_steps: int,
    survival_floor: float = SURVIVAL_FLOOR,
    edge_mask: np.ndarray | None = None,
) -> ChainResult:
    """Iterate psi <- pibar U psi, recording the conditional detection probability at each tick.

    The state is renormalized every tick, so survival is carried as a running
    product of (1 - p) rather than as the exponentially small norm of V^k psi0.
    ``edge_mask`` optionally marks basis sites whose conditional weight should be
    monitored (lattice boundary contamination); the maximum is reported.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if not isinstance(h, HermitianOperator):
        h = HermitianOperator(h)
    _validate_start(pi, psi0)
    u = propagator(h, dt).matrix
    pibar = pi.complement()

    p_cond = np.zeros(n_steps)
    p_exact = np.zeros(n_steps)
    survival = np.zeros(n_steps)
    psi = psi0.amplitudes.copy()
    s_prev = 1.0
    edge_max = 0.0
    done = n_steps
    early = False
    for k in range(n_steps):
        phi = u @ psi
        p = min(pi.weight(phi), 1.0)
        p_cond[k] = p
        p_exact[k] = p * s_prev
        s_prev = s_prev * (1.0 - p)
        survival[k] = s_prev
        if s_prev < survival_floor:
            done, early = k + 1, True
            log.info("chain stopped at tick %d: survival %.3e below floor", k + 1, s_prev)
            break
        kept = pibar.apply(phi)
        psi = kept / np.linalg.norm(kept)
        if edge_mask is not None:
            edge_max = max(edge_max, float(np.sum(np.abs(psi[edge_mask]) ** 2)))

    times = dt * np.arange(1, done + 1)
    return ChainResult(
        times=times,
        p_cond=p_cond[:done],
        p_exact=p_exact[:done],
        survival=survival[:done],
        dt=dt,
        terminated_early=early,
        final_state=psi,
        max_edge_weight=edge_max,
    )


@dataclass(frozen=True)
class BranchLedger:
    """Squared norms of the system-apparatus branches after each tick.

    ``detected[k-1][j-1]`` is the weight of "detected at tick j" observed at
    tick k (j <= k); ``undetected[k-1]`` is the weight of the still-running branch.
    """

    detected: list
    undetected: np.ndarray

    def branches(self, k: int) -> list[tuple[object, float]]:
        row = [(j + 1, float(wt)) for j, wt in enumerate(self.detected[k - 1])]
        return row + [("undetected", float(self.undetected[k - 1]))]

    def totals(self) -> np.ndarray:
        return np.array([np.sum(d) + u for d, u in zip(self.detected, self.undetected)])


def branch_ledger(h: HermitianOperator, pi: Projector, psi0: QuantumState, dt: float, k_max: int) -> BranchLedger:
    """Norm bookkeeping of the unitary branching picture, without renormalization.

    The detected-at-j branch observed at tick k carries U^(k-j) pi U V^(j-1) psi0;
    its norm is computed from the actual vector rather than assumed invariant.
    """
    if not 1 <= k_max <= LEDGER_MAX_STEPS:
        raise ValueError(f"k_max must lie in [1, {LEDGER_MAX_STEPS}]")
    if not isinstance(h, HermitianOperator):
        h = HermitianOperator(h)
    u = propagator(h, dt).matrix
    pibar = pi.complement()

    running = psi0.amplitudes.copy()  # V^(k) psi0, unnormalized
    branches: list[np.ndarray] = []   # detected branch vectors, evolved to the current tick
    detected, undetected = [], []
    for _ in range(k_max):
        branches = [u @ b for b in branches]
        phi = u @ running
        branches.append(pi.apply(phi))
        running = pibar.apply(phi)
        detected.append(np.array([np.real(np.vdot(b, b)) for b in branches]))
        undetected.append(float(np.real(np.vdot(running, running))))
    return BranchLedger(detected, np.array(undetected))


@dataclass(frozen=True)
class ZenoSweep:
    dts: np.ndarray
    p_first: np.ndarray
    slope: float | None
    coefficient: float
    extrapolated: float | None
    dropped: tuple = ()

    @property
    def degenerate(self) -> bool:
        return self.slope is None


def _extrapolate_to_zero(dts: np.ndarray, ratios: np.ndarray) -> float:
    """Neville polynomial extrapolation of ratios(dt) to dt = 0.

    Every integer power of dt is eliminated, not only even ones: for complex
    H the dt^3 term of p does not vanish in general.
    """
    x = list(dts)
    f = list(ratios)
    n = len(x)
    for m in range(1, n):
        f = [(x[i] * f[i + 1] - x[i + m] * f[i]) / (x[i] - x[i + m]) for i in range(n - m)]
    return float(f[0])


def zeno_sweep(h: HermitianOperator, pi: Projector, psi0: QuantumState, dt_list) -> ZenoSweep:
    """First-tick detection probability versus dt, its log-log slope and small-dt coefficient.

    The coefficient <psi0|H pi H|psi0> is the leading term of p/dt^2; the
    ratio extrapolated to dt = 0 is reported next to it for comparison.
    """
    dts = np.asarray(list(dt_list), dtype=float)
    if dts.size < 3:
        raise ValueError("zeno_sweep needs at least three dt values")
    if np.any(np.diff(dts) >= 0):
        raise ValueError("dt_list must be strictly decreasing")
    if not isinstance(h, HermitianOperator):
        h = HermitianOperator(h)
    _validate_start(pi, psi0)
    p = np.array([pi.weight(propagator(h, d).matrix @ psi0.amplitudes) for d in dts])
    hv = h.matrix @ psi0.amplitudes
    coefficient = pi.weight(hv)

    keep = p > UNDERFLOW_GUARD
    dropped = tuple(float(d) for d in dts[~keep])
    if keep.sum() < 2:
        return ZenoSweep(dts, p, None, coefficient, None, dropped)
    slope = float(np.polyfit(np.log(dts[keep]), np.log(p[keep]), 1)[0])
    extrapolated = _extrapolate_to_zero(dts[keep], p[keep] / dts[keep] ** 2)
    return ZenoSweep(dts, p, slope, coefficient, extrapolated, dropped)
