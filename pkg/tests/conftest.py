import numpy as np
import pytest

from spinc_emt.domains import build_sphere_ladder, build_torus2


@pytest.fixture(scope="session")
def sphere():
    return build_sphere_ladder(8)


@pytest.fixture(scope="session")
def torus16():
    return build_torus2(2 * np.pi, 2 * np.pi, 16)


_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(number, ok, detail)."""

    def rec(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA.append(line)
        print(line)
        return ok

    return rec


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
