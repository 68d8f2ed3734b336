"""Shared fixtures and hypothesis profile."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nls3lab import MassTriple, ground_state, make_grid
from nls3lab.linearized import assemble

settings.register_profile(
    "artifact",
    max_examples=25,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("artifact")

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def masses():
    return MassTriple(1.0, 1.0, 3.0)


@pytest.fixture(scope="session")
def grid512():
    return make_grid(np.inf, 512)


@pytest.fixture(scope="session")
def gs512(masses, grid512):
    return ground_state(masses, grid512)


@pytest.fixture(scope="session")
def ops512(masses, grid512, gs512):
    return assemble(masses, grid512, gs512)


@pytest.fixture(scope="session")
def pair512(ops512):
    from nls3lab.spectrum import compute_lambda1

    return compute_lambda1(ops512)


@pytest.fixture(scope="session")
def balanced256(masses):
    """Balanced grid, exact discrete ground state, operators and eigenpair."""
    from nls3lab.spectrum import compute_lambda1
    from nls3lab.states import balanced_grid

    g = balanced_grid(256)
    gs = ground_state(masses, g, discrete=True)
    ops = assemble(masses, g, gs)
    return g, gs, ops, compute_lambda1(ops)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
