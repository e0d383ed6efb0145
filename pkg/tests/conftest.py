import pytest
from hypothesis import settings

from inlslab.core import PhysParams, RadialGrid
from inlslab.ground_state import solve_ground_state

settings.register_profile("inls", max_examples=25, deadline=None)
settings.load_profile("inls")


@pytest.fixture(scope="session")
def q313():
    """Intercritical ground state d=3, b=1, alpha=1."""
    p = PhysParams(3, 1.0, 1.0)
    return solve_ground_state(p, RadialGrid(12.0, 512, 3))


@pytest.fixture(scope="session")
def pohozaev_profiles():
    cases = [((3, 0.5, 1.0), 15.0), ((2, 0.5, 1.5), 15.0), ((1, 0.5, 3.0), 15.0)]
    out = {}
    for (d, b, a), rmax in cases:
        p = PhysParams(d, b, a)
        geom = "cartesian-1d" if d == 1 else "radial"
        out[(d, b, a)] = solve_ground_state(p, RadialGrid(rmax, 2048, d, geom))
    return out


@pytest.fixture(scope="session")
def criterion(request):
    """Record one pass/fail line per acceptance criterion; printed at the end of the run."""
    lines = request.config.stash.setdefault(_LINES, [])

    def record(number, passed, detail):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        return passed

    return record


_LINES = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
