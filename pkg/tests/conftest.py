import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from homopt.problems.cartpole import EASY_THETA, TranscriptionSettings, build_cartpole_nlp
from homopt.solver import solve

settings.register_profile("homopt", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("homopt")


@pytest.fixture(scope="session")
def cartpole():
    return build_cartpole_nlp()


@pytest.fixture(scope="session")
def easy_solution(cartpole):
    rep = solve(cartpole, EASY_THETA.as_array(), np.zeros(cartpole.n_vars))
    assert rep.converged
    return rep


@pytest.fixture(scope="session")
def small_cartpole():
    return build_cartpole_nlp(TranscriptionSettings(knots=41))


@pytest.fixture
def criterion(request, capsys):
    """Print one PASS/FAIL line for an acceptance criterion and assert it."""
    def report(label, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  {label}: {detail}"
        with capsys.disabled():
            print("\n" + line)
        request.config.stash.setdefault(ACCEPTANCE_KEY, []).append(line)
        assert passed, line
    return report


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
