import numpy as np
import pytest
from hypothesis import settings

from onlinegam.blockstats import DataBlock
from onlinegam.grid import GridSpec

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def grid2():
    return GridSpec(21, 2)


def make_block(rng, n, d=2, family="poisson-log", index=1):
    X = rng.uniform(size=(n, d))
    eta = 0.5 + np.sin(2 * np.pi * X[:, 0])
    if d > 1:
        eta = eta + X[:, 1] ** 2
    if family == "poisson-log":
        Y = rng.poisson(np.exp(eta)).astype(float)
    elif family == "bernoulli-logit":
        Y = (rng.uniform(size=n) < 1 / (1 + np.exp(-eta))).astype(float)
    else:
        Y = eta + rng.normal(0, 0.3, n)
    return DataBlock(index, X, Y)


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
