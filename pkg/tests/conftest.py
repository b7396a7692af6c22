import numpy as np
import pytest

from hcace.core import PairData

ACCEPTANCE_LINES: list[str] = []


def make_pairs(r_t, d_t, r_c, d_c, x=None):
    n = len(r_t)
    if x is None:
        x = np.zeros((n, 1))
    return PairData(np.asarray(r_t, float), np.asarray(d_t, float), np.asarray(r_c, float),
                    np.asarray(d_c, float), np.asarray(x, float))


def random_pairs(rng, n, p=2, effect=0.5, compliance=0.6):
    x = rng.integers(0, 3, size=(n, p)).astype(float)
    d_t = (rng.random(n) < compliance).astype(float)
    d_c = np.zeros(n)
    base_t, base_c = rng.standard_normal(n), rng.standard_normal(n)
    eff = effect if np.isscalar(effect) else np.asarray(effect)
    return PairData(base_t + eff * d_t, d_t, base_c, d_c, x)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
