import math

import numpy as np
import pytest

from rfflow.curves import extract_measures
from rfflow.model import ModelConfig

# parameter tuples (mu, nu, psi, phi, r, s, lambda)
DESK = ModelConfig(0.5, 0.3014, 1.8, 1.4, 1.0, 0.0, 0.01)
RIDGE_PSI = ModelConfig(0.5, 0.3, 3.0, 2.0, 2.0, 0.4, 1e-3)
EPOCH_BUMP = ModelConfig(0.5, 0.3, 6.0, 3.0, 2.0, 0.4, 1e-4)
MP = ModelConfig(0.0, 1.0, 1.0, 2.0)



def mp_stieltjes(x, c, nu=1.0):
    """Upper-branch root of nu^2 x g^2 + (x - nu^2 (c - 1)) g + 1 = 0."""
    a, b = nu**2 * x, x - nu**2 * (c - 1)
    disc = np.sqrt(b * b - 4 * a + 0j)
    roots = np.array([(-b + disc) / (2 * a), (-b - disc) / (2 * a)])
    return roots[np.argmax(roots.imag)]


def mp_density(u, c):
    """Absolutely continuous part of the unit-variance law with ratio c."""
    lo, hi = (math.sqrt(c) - 1) ** 2, (math.sqrt(c) + 1) ** 2
    return np.sqrt(np.clip((hi - u) * (u - lo), 0, None)) / (2 * math.pi * u)


_ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, passed, detail)``."""
    store = request.config.stash[_ACCEPTANCE_KEY]

    def record(number, passed, detail):
        store[number] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_ACCEPTANCE_KEY, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        passed, detail = store[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def desk_measures():
    return extract_measures(DESK)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240501)
