import functools

import numpy as np
import pytest

from cdilab.fields import ScalarField
from cdilab.grid import BoundaryArcSet, DomainGrid
from cdilab.harness import bump

ACCEPTANCE_LINES = []


def linear_x(x, y):
    return x


@functools.lru_cache(maxsize=None)
def square(n):
    return DomainGrid("square", n)


@functools.lru_cache(maxsize=None)
def disk(n):
    return DomainGrid("disk", n)


def bump_pair(n, eps=0.1, center=(0.5, 0.5), radius=0.4):
    """sigma = 1 and sigma~ = 1 + eps * bump on the unit square."""
    g = square(n)
    s = ScalarField.constant(g, 1.0)
    st = ScalarField.from_function(g, lambda x, y: 1.0 + eps * bump(x, y, center[0], center[1], radius))
    return s, st


def c_arcs(g):
    """Top, left and bottom edges, and the same minus 0.07 at each end."""
    return BoundaryArcSet.from_arcs(g, [(2.0, 5.0)]), BoundaryArcSet.from_arcs(g, [(2.07, 4.93)])


def observed_order(hs, errs):
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
