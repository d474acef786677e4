import numpy as np
import pytest

from rckit import simulate


@pytest.fixture(scope="session")
def table_a1():
    return simulate.default_table_a1()


@pytest.fixture(scope="session")
def cohort(table_a1):
    return simulate.gen_cohort(table_a1, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def logistic_fixture():
    """Fixed 20-row logistic data set, plus 5 held-out rows."""
    g = np.random.default_rng(20)
    X = np.column_stack([np.ones(25), g.normal(size=25), g.normal(size=25)])
    eta = -0.3 + 0.8 * X[:, 1] - 0.5 * X[:, 2]
    y = (g.random(25) < 1 / (1 + np.exp(-eta))).astype(float)
    return X[:20], y[:20], X[20:]


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
