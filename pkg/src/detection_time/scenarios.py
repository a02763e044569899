"""Builders turning physical setups into (H, pi, psi0) triples.

Lattice models use a 1-d tight-binding discretization of p^2/2m with hard
walls: hopping -1/(2 m a^2) between neighbours and on-site 1/(m a^2), so that
long-wavelength states see E = k^2/2m. Positions are x_j = j * a.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping, NamedTuple

import numpy as np

from .chain import ChainResult, run_chain
from .linalg import (
    HERMITIAN_TOL,
    IDEMPOTENT_TOL,
    NORM_TOL,
    HermitianOperator,
    Projector,
    QuantumState,
    ValidationError,
    make_projector,
    propagator,
)

log = logging.getLogger(__name__)

EDGE_FRACTION = 0.05
EDGE_WEIGHT_LIMIT = 0.01
N_MIN, N_MAX = 2, 2048


class ScenarioError(ValueError):
    """A scenario's parameters are physically or numerically inconsistent."""


class ConfigurationWarning(UserWarning):
    """The discretization may not represent the intended continuum physics."""


class Setup(NamedTuple):
    h: HermitianOperator
    pi: Projector
    psi0: QuantumState


def check_setup(setup: Setup) -> Setup:
    """Assert the structural invariants every builder promises."""
    h, pi, psi0 = setup
    m = h.matrix
    if np.max(np.abs(m - m.conj().T)) > HERMITIAN_TOL:
        raise ValidationError("H is not Hermitian")
    p = pi.matrix
    if not pi.is_diagonal and np.max(np.abs(p @ p - p)) > IDEMPOTENT_TOL:
        raise ValidationError("pi is not idempotent")
    if np.sqrt(pi.weight(psi0.amplitudes)) > NORM_TOL:
        raise ValidationError("psi0 is not inside the undetected subspace")
    return setup


def lattice_positions(n: int, a: float) -> np.ndarray:
    return a * np.arange(n)


def lattice_hamiltonian(n: int, a: float, m: float, potential: np.ndarray | None = None) -> HermitianOperator:
    hop = 1.0 / (2.0 * m * a * a)
    h = np.diag(np.full(n, 2.0 * hop)) - hop * (np.eye(n, k=1) + np.eye(n, k=-1))
    if potential is not None:
        h = h + np.diag(np.asarray(potential, dtype=float))
    return HermitianOperator(h)


def region_sites(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return np.flatnonzero((x >= lo - 1e-12) & (x <= hi + 1e-12))


def edge_mask(n: int, fraction: float = EDGE_FRACTION) -> np.ndarray:
    """Sites in the outer ``fraction`` of the lattice at either end."""
    width = max(1, int(math.ceil(fraction * n)))
    mask = np.zeros(n, dtype=bool)
    mask[:width] = True
    mask[n - width:] = True
    return mask


def gaussian_packet(x: np.ndarray, x0: float, sigma: float, k0: float) -> np.ndarray:
    amps = np.exp(-((x - x0) ** 2) / (4.0 * sigma**2) + 1j * k0 * x)
    return amps / np.linalg.norm(amps)


def _packet_state(x, packet: Mapping[str, float], excluded: np.ndarray, a: float, what: str) -> QuantumState:
    x0, sigma, k0 = float(packet["x0"]), float(packet["sigma"]), float(packet.get("k0", 0.0))
    if sigma <= 0:
        raise ScenarioError("packet sigma must be positive")
    if excluded.size and np.min(np.abs(x[excluded] - x0)) < 3.0 * sigma:
        raise ScenarioError(f"initial packet overlaps the {what}: keep it at least 3 sigma away")
    if abs(k0) > 0.9 * math.pi / a:
        warnings.warn(
            f"k0={k0:g} is within 10% of the lattice band edge pi/a; dispersion is far from k^2/2m",
            ConfigurationWarning,
            stacklevel=3,
        )
    amps = gaussian_packet(x, x0, sigma, k0)
    # site-sampled Gaussian tails are cut on the excluded sites, then renormalized
    amps[excluded] = 0.0
    return QuantumState(amps / np.linalg.norm(amps))


def build_two_level_decay(omega: float, dt: float | None = None) -> Setup:
    """H = omega * sigma_x, start in level 0, detect level 1.

    Here Hbar vanishes identically, so every tick has the same detection
    probability sin^2(omega * dt).
    """
    if omega < 0:
        raise ScenarioError("omega must be non-negative")
    h = HermitianOperator(omega * np.array([[0.0, 1.0], [1.0, 0.0]]))
    return check_setup(Setup(h, make_projector({1}, 2), QuantumState([1.0, 0.0], "level")))


def ww_mode_energies(m: int, band: float) -> np.ndarray:
    """Cell-centred, uniformly spaced energies filling [-band/2, band/2] at density m/band."""
    return -band / 2.0 + band * (np.arange(m) + 0.5) / m


def golden_rule_rate(g: float, m: int, band: float) -> float:
    return 2.0 * math.pi * g * g * m / band


def build_ww_decay(m: int, g: float, band: float, dt: float | None = None, t_max: float | None = None) -> Setup:
    """Excited level at zero energy coupled with strength g to m flat-band modes.

    pi projects onto all modes, so detecting "not excited" means decay. The
    discrete band recurs after 2 pi / spacing; a warning is issued if that is
    shorter than the horizon.
    """
    if m < 32:
        raise ScenarioError("need at least 32 continuum modes")
    if g < 0 or band <= 0:
        raise ScenarioError("g must be non-negative and band positive")
    n = m + 1
    h = np.zeros((n, n))
    h[0, 1:] = g
    h[1:, 0] = g
    h[1:, 1:] = np.diag(ww_mode_energies(m, band))
    recurrence = 2.0 * math.pi * m / band
    if t_max is not None and recurrence < t_max:
        warnings.warn(
            f"mode recurrence time {recurrence:.3g} is shorter than t_max={t_max:g}; increase m",
            ConfigurationWarning,
            stacklevel=2,
        )
    psi0 = np.zeros(n)
    psi0[0] = 1.0
    pi = make_projector(range(1, n), n)
    return check_setup(Setup(HermitianOperator(h), pi, QuantumState(psi0, "level")))


def build_arrival_1d(
    n: int,
    a: float,
    m: float,
    packet: Mapping[str, float],
    detector: Mapping[str, float],
    dt: float | None = None,
) -> Setup:
    """Free particle on a lattice with a detector slab z_min <= x <= z_max."""
    x = lattice_positions(n, a)
    det = region_sites(x, float(detector["z_min"]), float(detector["z_max"]))
    if det.size == 0:
        raise ScenarioError("detector slab contains no lattice sites")
    psi0 = _packet_state(x, packet, det, a, "detector")
    return check_setup(Setup(lattice_hamiltonian(n, a, m), make_projector(det, n), psi0))


def box_ground_state(n: int, sites: np.ndarray) -> np.ndarray:
    """Lowest standing wave of a hard-wall box occupying the contiguous ``sites``."""
    length = sites.size
    amps = np.zeros(n, dtype=complex)
    amps[sites] = np.sin(math.pi * np.arange(1, length + 1) / (length + 1))
    return amps / np.linalg.norm(amps)


def build_dwell_1d(
    n: int,
    a: float,
    m: float,
    region: Mapping[str, float],
    psi0_recipe: Mapping[str, Any] | None = None,
    dt: float | None = None,
    exits: str = "both",
) -> Setup:
    """Particle starting inside ``region``; detection anywhere outside it ends the dwell.

    ``exits`` restricts the detector to the complement on one side ("left" or
    "right"), leaving the other side undetected.
    """
    x = lattice_positions(n, a)
    inside = region_sites(x, float(region["z_min"]), float(region["z_max"]))
    if inside.size == 0:
        raise ScenarioError("dwell region contains no lattice sites")
    outside = np.setdiff1d(np.arange(n), inside)
    if exits == "left":
        outside = outside[outside < inside[0]]
    elif exits == "right":
        outside = outside[outside > inside[-1]]
    elif exits != "both":
        raise ScenarioError(f"exits must be both, left or right, not {exits!r}")

    recipe = dict(psi0_recipe or {"kind": "box_ground"})
    kind = recipe.pop("kind", "box_ground")
    if kind == "box_ground":
        amps = box_ground_state(n, inside)
    elif kind == "gaussian":
        amps = gaussian_packet(x, float(recipe["x0"]), float(recipe["sigma"]), float(recipe.get("k0", 0.0)))
        off = np.setdiff1d(np.arange(n), inside)
        if np.sqrt(np.sum(np.abs(amps[off]) ** 2)) > NORM_TOL:
            raise ScenarioError("psi0 must be supported inside the dwell region")
    else:
        raise ScenarioError(f"unknown psi0 recipe {kind!r}")
    return check_setup(Setup(lattice_hamiltonian(n, a, m), make_projector(outside, n), QuantumState(amps)))


@dataclass(frozen=True)
class ClassicalPacketOracle:
    """Rectangular classical packet of transit time T crossing a point detector.

    Conditioned on no detection yet, the hazard is 1/(T - t); the resulting
    density is flat, 1/T on (0, T).
    """

    T: float

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")

    def w(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t >= self.T):
            raise ValueError(f"hazard diverges at t >= T={self.T:g}")
        # the t -> 0+ limit 1/T is used at t = 0 itself
        return np.where(t >= 0, 1.0 / (self.T - np.maximum(t, 0.0)), 0.0)

    def u(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            inside = np.log(self.T / (self.T - np.clip(t, 0.0, self.T)))
        return np.where(t <= 0, 0.0, np.where(t >= self.T, np.inf, inside))

    def density(self, t):
        t = np.asarray(t, dtype=float)
        return np.where((t > 0) & (t < self.T), 1.0 / self.T, 0.0)


def classical_packet_oracle(T: float) -> ClassicalPacketOracle:
    return ClassicalPacketOracle(T)


@dataclass(frozen=True)
class TunnelingPlan:
    """Two-detector tunneling-time protocol.

    Stage 1 watches for the particle leaving V1 (sites left of the barrier).
    The stage-1 detection collapse, taken at a representative detection time,
    seeds stage 2, which waits for detection in V2 (sites right of the barrier).
    """

    h: HermitianOperator
    v1: np.ndarray
    forbidden: np.ndarray
    v2: np.ndarray
    psi0: QuantumState
    dt: float

    @property
    def n(self) -> int:
        return self.h.dim

    def stage1(self) -> Setup:
        leave_v1 = make_projector(np.concatenate([self.forbidden, self.v2]), self.n)
        return check_setup(Setup(self.h, leave_v1, self.psi0))

    def stage2_time(self, stage1: ChainResult, init: str = "median", time: float | None = None) -> float:
        if init == "custom_time":
            if time is None:
                raise ScenarioError("stage2_init=custom_time needs a time")
            return float(time)
        if stage1.total <= 1e-12:
            raise ScenarioError("stage 1 never detects the particle leaving V1 within the horizon")
        if init == "mean":
            k = int(np.clip(np.rint(stage1.conditional_mean / self.dt), 1, stage1.times.size))
            return float(stage1.times[k - 1])
        if init == "median":
            cdf = np.cumsum(stage1.p_exact) / stage1.total
            return float(stage1.times[int(np.searchsorted(cdf, 0.5))])
        raise ScenarioError(f"unknown stage2_init {init!r}")

    def stage2(self, stage1: ChainResult, init: str = "median", time: float | None = None) -> Setup:
        """Collapse onto 'left V1' at the chosen stage-1 tick, restricted to outside V2."""
        t0 = self.stage2_time(stage1, init, time)
        k = int(round(t0 / self.dt))
        if k < 1:
            raise ScenarioError("stage-2 start time must be at least one tick")
        s1 = self.stage1()
        before = conditional_chain_state(self.h, s1.pi, self.psi0, self.dt, k - 1)
        after = propagator(self.h, self.dt).matrix @ before
        amps = s1.pi.apply(after)
        amps[self.v2] = 0.0
        norm = np.linalg.norm(amps)
        if norm**2 < 1e-300:
            raise ScenarioError("stage-1 collapse state has no weight outside V2")
        return check_setup(Setup(self.h, make_projector(self.v2, self.n), QuantumState(amps / norm)))


def conditional_chain_state(h, pi: Projector, psi0: QuantumState, dt: float, k: int) -> np.ndarray:
    """Normalized V^k psi0 with V = pibar exp(-i H dt)."""
    u = propagator(h, dt).matrix
    pibar = pi.complement()
    psi = psi0.amplitudes.copy()
    for _ in range(k):
        psi = pibar.apply(u @ psi)
        psi = psi / np.linalg.norm(psi)
    return psi


def build_tunneling_1d(
    n: int,
    a: float,
    m: float,
    barrier: Mapping[str, float],
    packet: Mapping[str, float],
    dt: float,
) -> TunnelingPlan:
    x = lattice_positions(n, a)
    left, right, height = float(barrier["left"]), float(barrier["right"]), float(barrier["height"])
    if right < left:
        raise ScenarioError("barrier right edge must not precede its left edge")
    forbidden = region_sites(x, left, right)
    if forbidden.size == 0:
        raise ScenarioError("barrier contains no lattice sites")
    v1 = np.arange(0, forbidden[0])
    v2 = np.arange(forbidden[-1] + 1, n)
    if v1.size == 0 or v2.size == 0:
        raise ScenarioError("barrier must leave allowed regions on both sides")
    x0 = float(packet["x0"])
    if not (x[v1[0]] <= x0 <= x[v1[-1]]):
        raise ScenarioError("packet must start in V1, left of the barrier")
    k0 = float(packet.get("k0", 0.0))
    kinetic = k0 * k0 / (2.0 * m)
    if height <= kinetic:
        log.info("barrier height %.3g does not exceed packet kinetic energy %.3g", height, kinetic)
    potential = np.zeros(n)
    potential[forbidden] = height
    psi0 = _packet_state(x, packet, np.concatenate([forbidden, v2]), a, "barrier")
    return TunnelingPlan(lattice_hamiltonian(n, a, m, potential), v1, forbidden, v2, psi0, dt)


def run_tunneling(
    plan: TunnelingPlan,
    t_max1: float,
    t_max2: float,
    init: str = "median",
    time: float | None = None,
) -> tuple[ChainResult, Setup, ChainResult]:
    s1 = plan.stage1()
    r1 = run_chain(*s1, plan.dt, int(round(t_max1 / plan.dt)))
    s2 = plan.stage2(r1, init, time)
    r2 = run_chain(*s2, plan.dt, int(round(t_max2 / plan.dt)))
    return r1, s2, r2


KINDS = ("two_level_decay", "ww_decay", "arrival_1d", "dwell_1d", "tunneling_1d", "custom")


@dataclass(frozen=True)
class ScenarioSpec:
    """Declarative description of one run; ``build`` produces the (H, pi, psi0) triple."""

    kind: str
    parameters: Mapping[str, Any]
    dt: float
    t_max: float
    n: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScenarioError(f"unknown scenario kind {self.kind!r}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ScenarioError("dt must be positive and finite")
        if not (self.t_max >= self.dt and math.isfinite(self.t_max)):
            raise ScenarioError("t_max must be finite and at least dt")
        n = self.dimension
        if n is not None and not N_MIN <= n <= N_MAX:
            raise ScenarioError(f"dimension {n} outside [{N_MIN}, {N_MAX}]")

    @property
    def dimension(self) -> int | None:
        p = self.parameters
        if self.kind == "two_level_decay":
            return 2
        if self.kind == "ww_decay":
            return int(p["m"]) + 1
        if self.kind == "custom":
            return len(p["psi0"]["real"])
        return self.n

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.t_max / self.dt + 1e-9))

    @property
    def is_lattice(self) -> bool:
        return self.kind in ("arrival_1d", "dwell_1d", "tunneling_1d")

    def build(self) -> Setup:
        p = dict(self.parameters)
        if self.kind == "two_level_decay":
            return build_two_level_decay(p["omega"], self.dt)
        if self.kind == "ww_decay":
            return build_ww_decay(int(p["m"]), p["g"], p["band"], self.dt, self.t_max)
        if self.kind == "arrival_1d":
            return build_arrival_1d(self.n, p.get("a", 1.0), p.get("mass", 1.0), p["packet"], p["detector"], self.dt)
        if self.kind == "dwell_1d":
            return build_dwell_1d(
                self.n, p.get("a", 1.0), p.get("mass", 1.0), p["region"],
                p.get("psi0"), self.dt, p.get("exits", "both"),
            )
        if self.kind == "tunneling_1d":
            plan = self.tunneling_plan()
            r1 = run_chain(*plan.stage1(), self.dt, self.n_steps)
            return plan.stage2(r1, p.get("stage2_init", "median"), p.get("stage2_time"))
        return _custom_setup(p)

    def tunneling_plan(self) -> TunnelingPlan:
        p = self.parameters
        return build_tunneling_1d(self.n, p.get("a", 1.0), p.get("mass", 1.0), p["barrier"], p["packet"], self.dt)


def _complex(block: Mapping[str, Any]) -> np.ndarray:
    re = np.asarray(block["real"], dtype=float)
    im = np.asarray(block.get("imag", np.zeros_like(re)), dtype=float)
    return re + 1j * im


def _custom_setup(p: Mapping[str, Any]) -> Setup:
    h = HermitianOperator(_complex(p["H"]))
    amps = _complex(p["psi0"])
    psi0 = QuantumState(amps / np.linalg.norm(amps))
    return check_setup(Setup(h, make_projector(p["detector"], h.dim), psi0))
