import numpy as np
import pytest

from wvgd.core import RngStream
from wvgd.targets import sample_random_mixture, standard_normal_target


@pytest.fixture
def normal():
    return standard_normal_target()


@pytest.fixture
def mixtures():
    return [sample_random_mixture(RngStream(s).spawn(0)) for s in range(5)]


def se_close(est, ref, se, floor=1e-3, k=3.0):
    """|est - ref| <= max(floor, k * se) elementwise."""
    est, ref, se = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (est, ref, se))
    return np.all(np.abs(est - ref) <= np.maximum(floor, k * se))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
