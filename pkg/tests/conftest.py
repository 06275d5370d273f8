import numpy as np
import pytest

from dzo.graph import build_topology
from dzo.oracle import Noise, make_problem


@pytest.fixture
def ring4():
    return build_topology("ring", 4)


@pytest.fixture
def ring5():
    return build_topology("ring", 5)


@pytest.fixture
def identity_quadratic():
    def make(n=1, p=2, noise=None):
        return make_problem("quadratic_pl", n, p, noise or Noise(), A=np.eye(p), b=np.zeros(p))

    return make


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record and print one PASS/FAIL line for a numbered criterion, then assert it."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def report(num: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {num:2d}: {detail}"
        lines[num] = line
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for num in sorted(lines):
            terminalreporter.write_line(lines[num])
