import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_model
from detection_time.chain import _extrapolate_to_zero, run_chain
from detection_time.conditional import (
    ApproximationWarning,
    ConditionalEvolution,
    GridError,
    conditional_hamiltonian,
    hazard_series,
    validity_epsilon,
)
from detection_time.linalg import HermitianOperator, QuantumState, ValidationError, make_projector, propagator
from detection_time.scenarios import build_arrival_1d, build_two_level_decay

SX = np.array([[0, 1], [1, 0]], dtype=complex)


def test_hbar_with_empty_detector_is_h(rng):
    h, _, _ = random_model(rng, n=5)
    assert np.allclose(conditional_hamiltonian(h, make_projector([], 5)).matrix, h.matrix)


def test_hbar_with_full_detector_is_zero(rng):
    h, _, _ = random_model(rng, n=5)
    assert np.array_equal(conditional_hamiltonian(h, make_projector(range(5), 5)).matrix, np.zeros((5, 5)))


def test_hbar_two_level_vanishes():
    hb = conditional_hamiltonian(HermitianOperator(SX), make_projector({1}, 2))
    assert np.array_equal(hb.matrix, np.zeros((2, 2)))


def test_psi0_must_start_undetected():
    with pytest.raises(ValidationError):
        ConditionalEvolution(HermitianOperator(SX), make_projector({1}, 2), QuantumState([0.6, 0.8]), 0.1)


class TestConditionalState:
    def test_first_tick_is_free_step(self, rng):
        h, pi, psi0 = random_model(rng, n=6)
        ce = ConditionalEvolution(h, pi, psi0, 0.05)
        expected = propagator(h, 0.05).matrix @ psi0.amplitudes
        assert np.allclose(ce.conditional_state(0.05).amplitudes, expected, atol=1e-13)

    def test_stationary_undetected_state(self):
        # H commutes with pibar and psi0 is an eigenstate inside the undetected block
        h = HermitianOperator(np.diag([0.3, -1.2, 2.0]))
        ce = ConditionalEvolution(h, make_projector({2}, 3), QuantumState([1, 0, 0]), 0.1)
        psi = ce.conditional_state(1.0).amplitudes
        assert abs(abs(np.vdot([1, 0, 0], psi)) - 1) < 1e-14
        assert np.all(hazard_series(ce, 20).p == 0)

    def test_two_level_detection_probability(self):
        ce = ConditionalEvolution(*build_two_level_decay(1.0), 0.1)
        for t in (0.1, 0.5, 2.0):
            psi = ce.conditional_state(t).amplitudes
            assert abs(psi[1]) ** 2 == pytest.approx(9.9667110793791818e-3, rel=1e-12)

    def test_off_grid_time_rejected(self):
        ce = ConditionalEvolution(*build_two_level_decay(1.0), 0.1)
        with pytest.raises(GridError):
            ce.conditional_state(0.15)
        with pytest.raises(GridError):
            ce.conditional_state(0.0)


class TestHazardSeries:
    def test_decoupled_detector(self):
        h = HermitianOperator(np.array([[0, 1, 0], [1, 0, 0], [0, 0, 5]], dtype=complex))
        ce = ConditionalEvolution(h, make_projector({2}, 3), QuantumState([1, 0, 0]), 0.2)
        assert np.all(hazard_series(ce, 50).p == 0)

    def test_two_level_constant(self):
        hs = hazard_series(ConditionalEvolution(*build_two_level_decay(1.0), 0.1), 100)
        assert np.allclose(hs.p, math.sin(0.1) ** 2, rtol=1e-12)
        assert np.allclose(hs.w, math.sin(0.1) ** 2 / 0.1, rtol=1e-12)
        assert np.allclose(hs.times, 0.1 * np.arange(1, 101))

    def test_small_arrival_matches_chain(self):
        dt = 0.05
        setup = build_arrival_1d(64, 1.0, 1.0, {"x0": 16.0, "sigma": 4.0, "k0": 1.0}, {"z_min": 44, "z_max": 50}, dt)
        n = 800
        hs = hazard_series(ConditionalEvolution(*setup, dt), n)
        ch = run_chain(*setup, dt, n)
        keep = np.concatenate(([1.0], ch.survival[:-1])) > 0.5
        assert np.all(hs.w >= 0)
        assert np.max(ch.p_cond[keep]) > 1e-4
        dev = np.max(np.abs(hs.p[keep] - ch.p_cond[keep])) / np.max(ch.p_cond[keep])
        assert dev <= 0.02


class TestValidityEpsilon:
    def test_zero_dt(self, rng):
        h, _, psi0 = random_model(rng)
        assert validity_epsilon(h, psi0, 0.0) == pytest.approx(0, abs=1e-15)

    def test_eigenstate(self):
        v = np.array([1, 1]) / math.sqrt(2)
        for dt in (0.1, 1.0, 7.0):
            assert validity_epsilon(HermitianOperator(SX), QuantumState(v), dt) == pytest.approx(0, abs=1e-15)

    def test_two_level(self):
        eps = validity_epsilon(HermitianOperator(SX), QuantumState([1, 0]), 0.1)
        assert eps == pytest.approx(1 - math.cos(0.1), rel=1e-10)
        assert eps == pytest.approx(4.996e-3, abs=1e-6)

    def test_warning_above_threshold(self):
        ce = ConditionalEvolution(*build_two_level_decay(1.0), 0.5)
        with pytest.warns(ApproximationWarning):
            ce.check_validity()
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            ConditionalEvolution(*build_two_level_decay(1.0), 0.01).check_validity()


def test_hbar_annihilated_by_pi(rng):
    for _ in range(20):
        h, pi, _ = random_model(rng)
        hb = conditional_hamiltonian(h, pi).matrix
        assert np.max(np.abs(hb - hb.conj().T)) <= 1e-12
        assert np.max(np.abs(pi.matrix @ hb)) <= 1e-12
        assert np.max(np.abs(hb @ pi.matrix)) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), phase=st.floats(0, 2 * math.pi), shift=st.floats(-20, 20))
def test_hazard_phase_and_shift_invariant(seed, phase, shift):
    h, pi, psi0 = random_model(np.random.default_rng(seed))
    base = hazard_series(ConditionalEvolution(h, pi, psi0, 0.05), 40).w
    rotated = QuantumState(np.exp(1j * phase) * psi0.amplitudes)
    assert np.max(np.abs(hazard_series(ConditionalEvolution(h, pi, rotated, 0.05), 40).w - base)) <= 1e-10
    shifted = hazard_series(ConditionalEvolution(h + shift, pi, psi0, 0.05), 40).w
    assert np.max(np.abs(shifted - base)) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), dt=st.floats(1e-3, 3.0))
def test_per_tick_probability_bounded(seed, dt):
    ce = ConditionalEvolution(*random_model(np.random.default_rng(seed), scale=3.0), dt)
    p = hazard_series(ce, 30).p
    assert np.all((p >= 0) & (p <= 1))


def test_hazard_quadratic_in_dt_at_fixed_time(rng):
    h, pi, psi0 = random_model(rng, n=7)
    t = 0.1
    dts = np.array([1e-2, 5e-3, 2.5e-3])
    ratios = []
    for dt in dts:
        k = int(round(t / dt))
        ratios.append(hazard_series(ConditionalEvolution(h, pi, psi0, dt), k).p[-1] / dt**2)
    limit = _extrapolate_to_zero(dts, np.array(ratios))
    ce = ConditionalEvolution(h, pi, psi0, 1.0)
    psibar = ce.undetected_state(t).amplitudes
    expected = pi.weight(h.matrix @ psibar)
    assert limit == pytest.approx(expected, rel=1e-4)
