import numpy as np
import pytest

from hawkes_mitigation import NetworkModel, spectral_radius


def random_model(n, seed, rho=0.6, density=0.6, mu=(0.5, 1.0), mu_M=None, B=None):
    """Stable random model with the given spectral radius of A/omega (omega = 1)."""
    rng = np.random.default_rng(seed)
    A = np.where(rng.random((n, n)) < density, rng.uniform(0.05, 0.5, (n, n)), 0.0)
    r = spectral_radius(A, 1.0)
    if r > 0:
        A *= rho / r
    mu_F = rng.uniform(*mu, n)
    mu_M = rng.uniform(*mu, n) if mu_M is None else np.asarray(mu_M, float)
    if B is None:
        B = np.maximum(np.eye(n), A.T > 0)
    return NetworkModel(A, 1.0, mu_F, mu_M, B)


@pytest.fixture
def model3():
    return random_model(3, 11)


@pytest.fixture
def model5():
    return random_model(5, 5)


# acceptance criterion -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
