import numpy as np
import pytest

from pccomplete import tensor as T


@pytest.fixture(autouse=True)
def float64_mode():
    """Every test starts in 64-bit mode with gradient recording on."""
    previous = T.get_default_dtype()
    T.set_default_dtype(np.float64)
    yield
    T.set_default_dtype(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one verdict line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
