import numpy as np
import pytest

from bvp_discovery.models import CATALOG, all_forcings, get_model
from bvp_discovery.solver import generate_trials

_FULL = {}


def full_trials(name: str):
    """Every forcing of a model's default grid, solved once per session."""
    if name not in _FULL:
        model = get_model(name)
        _FULL[name] = generate_trials(model, all_forcings(model), model.default_grid())
    return _FULL[name]


@pytest.fixture(scope="session")
def trials_for():
    return full_trials


@pytest.fixture(params=sorted(CATALOG))
def model_name(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    def _record(number: int, passed: bool, detail: str):
        ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
