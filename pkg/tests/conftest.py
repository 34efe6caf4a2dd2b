import warnings
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from mfgcorner.geometry import PolygonalInclusion

SCENARIOS = Path(str(resources.files("mfgcorner") / "scenarios"))


@pytest.fixture
def square():
    return PolygonalInclusion(np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]]))


@pytest.fixture
def scenario_dir():
    return SCENARIOS


@pytest.fixture(autouse=True)
def _quiet_small_data():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="boundary data size")
        yield


_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def criterion():
    """Record and print one pass/fail line for an acceptance criterion."""
    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
