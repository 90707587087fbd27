import os
import sys

from hypothesis import HealthCheck, settings
import pytest

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("ci", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture(scope="session")
def nominal():
    from ccplan.scenario import make_nominal_scenario

    return make_nominal_scenario()


@pytest.fixture(scope="session")
def grid60():
    from ccplan.transcribe import TimeGrid

    return TimeGrid(50.0, 60)


@pytest.fixture(scope="session")
def nominal_solution(nominal, grid60):
    from ccplan.solve import initial_guess, solve
    from ccplan.transcribe import build_continuous_nlp

    nlp = build_continuous_nlp(nominal, grid60)
    return nlp, solve(nlp, initial_guess(nominal, grid60))


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; the terminal summary prints them in order."""

    def record(number, title, passed, detail):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}: {title} ({detail})"
        _CRITERIA[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
