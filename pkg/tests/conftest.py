import os
import sys

import hypothesis
import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

np.seterr(all="raise", under="ignore")

hypothesis.settings.register_profile("default", max_examples=40, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=300, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: runs for more than a few seconds")


@pytest.fixture
def five_modes():
    from bose2d.model import ModeSet

    return ModeSet.ball(1)


@pytest.fixture
def gaussian_w():
    from bose2d.model import Potential

    return Potential.gaussian(1.0, 0.02)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one acceptance line, then asserts."""

    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
