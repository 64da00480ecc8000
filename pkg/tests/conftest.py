import numpy as np
import pytest

from hybrid_iforest.synthetic import sample_annulus

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def torus_train():
    return sample_annulus(1000, 1.5, 4.0, np.random.default_rng(7))
