import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lieflow.lie_algebra import builtin

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(params=["so3", "su2", "so4"])
def algebra(request):
    return builtin(request.param)


@pytest.fixture
def so3():
    return builtin("so3")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria outcomes, printed in the terminal summary
CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion(request):
    """``record(passed, detail)`` for a test named ``test_criterion_<n>_...``.

    A test that raises before recording is reported as FAIL.
    """
    number = int(request.node.name.split("_")[2])
    CRITERIA[number] = f"criterion {number}: FAIL  (did not complete)"

    def record(passed: bool, detail: str = ""):
        CRITERIA[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}" + (f"  ({detail})" if detail else "")
        assert passed, CRITERIA[number]

    return record


def pytest_terminal_summary(terminalreporter):
    lines = [CRITERIA[k] for k in sorted(CRITERIA)]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
