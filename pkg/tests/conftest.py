import numpy as np
import pytest

from detection_time.linalg import HermitianOperator, QuantumState, make_projector

ACCEPTANCE_LINES: list[str] = []


def random_model(rng, n=None, scale=1.0):
    """Random Hermitian H, non-trivial diagonal detector, and a normalized psi0 outside it."""
    n = n or int(rng.integers(2, 13))
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    h = HermitianOperator(scale * (a + a.conj().T) / (2 * np.sqrt(n)))
    r = int(rng.integers(1, n))
    det = rng.choice(n, size=r, replace=False)
    pi = make_projector(det, n)
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    v[det] = 0
    return h, pi, QuantumState(v / np.linalg.norm(v))


@pytest.fixture
def rng():
    return np.random.default_rng(20261019)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
