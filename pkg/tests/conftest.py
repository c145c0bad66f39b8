import numpy as np
import pytest
from hypothesis import settings

from blowup4d.grid import Box, Grid4, build_domain
from blowup4d.reduced_energy import GreensCache

settings.register_profile("repo", deadline=None, derandomize=True, max_examples=40)
settings.load_profile("repo")

UNIT = Box((0.0,) * 4, (1.0,) * 4)
CENTRE = np.full(4, 0.5)

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES = []


def unit_mask(n):
    return build_domain(UNIT, Grid4.for_box(UNIT.lo, UNIT.hi, n))


@pytest.fixture(scope="session")
def mask9():
    return unit_mask(9)


@pytest.fixture(scope="session")
def mask17():
    return unit_mask(17)


@pytest.fixture(scope="session")
def cache17(mask17):
    return GreensCache(mask17)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
