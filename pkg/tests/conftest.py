import numpy as np
import pytest

CRITERIA = 10


def pytest_configure(config):
    config._acceptance_lines = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def record(request):
    """``record(k, ok, detail)`` logs one pass/fail line for acceptance criterion ``k``."""
    lines = request.config._acceptance_lines

    def _record(k, ok, detail):
        line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines[k] = line
        print(line)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config._acceptance_lines
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, CRITERIA + 1):
        terminalreporter.write_line(lines.get(k, f"criterion {k:2d}: FAIL  (not run)"))
