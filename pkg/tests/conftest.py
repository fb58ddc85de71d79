import numpy as np
import pytest
from hypothesis import settings

from splap.grid import build_grid

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def grid32():
    return build_grid(1.0, 32)


@pytest.fixture
def sine32(grid32):
    return np.sin(np.pi * grid32.nodes)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS, key=lambda k: (int(k.rstrip("ab")), k)):
        terminalreporter.write_line(mod.RESULTS[key])
