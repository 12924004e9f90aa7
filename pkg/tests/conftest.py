import os

import pytest
from hypothesis import settings

from horizon_ez.model import RectDomain, heston_coefficients, paper_heston, paper_preferences
from horizon_ez.pde import build_grid, solve_dirichlet

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def prefs():
    return paper_preferences()


@pytest.fixture(scope="session")
def market():
    return paper_heston(0.0)


@pytest.fixture(scope="session")
def coeffs(market):
    return heston_coefficients(market)


@pytest.fixture(scope="session")
def domain():
    return RectDomain(0.02, 0.001, 1.0)


@pytest.fixture(scope="session")
def solution(domain, coeffs, prefs):
    return solve_dirichlet(build_grid(domain, 99, 665), coeffs, prefs)


@pytest.fixture(scope="session")
def coarse_solution(domain, coeffs, prefs):
    return solve_dirichlet(build_grid(domain, 49, 332), coeffs, prefs)


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
