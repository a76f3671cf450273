import sys

import numpy as np
import pytest

from gibbsinit._accel import BACKEND_ENV


@pytest.fixture(params=["numba", "numpy"])
def backend(request, monkeypatch):
    """Run a test under each kernel backend."""
    monkeypatch.setenv(BACKEND_ENV, request.param)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(mod.RESULTS):
        passed, detail = mod.RESULTS[crit]
        terminalreporter.write_line(f"criterion {crit}: {'PASS' if passed else 'FAIL'}  {detail}")
