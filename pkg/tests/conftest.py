import pytest

from blowup_lab.ground_state import solve_ground_state
from blowup_lab.linops import LinearizedPair
from blowup_lab.profile import build_expansion
from blowup_lab.radial import RadialGrid


@pytest.fixture(scope="session")
def bundle1():
    return solve_ground_state(RadialGrid(1, 0.01, 30.0), sigma=0.3)


@pytest.fixture(scope="session")
def bundle2():
    return solve_ground_state(RadialGrid(2, 0.01, 24.0), sigma=0.3)


@pytest.fixture(scope="session")
def pair2(bundle2):
    return LinearizedPair(bundle2)


@pytest.fixture(scope="session")
def expansion2(bundle2):
    return build_expansion(bundle2, 0.3, K=2, Kprime=1)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


@pytest.fixture
def criterion(request):
    """Record a criterion verdict; the line is printed live and again in the summary."""
    table = request.config.stash[ACCEPTANCE_KEY]

    def record(number: int, passed: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        table[number] = line
        reporter = request.config.pluginmanager.get_plugin("terminalreporter")
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    table = config.stash.get(ACCEPTANCE_KEY, {})
    if table:
        terminalreporter.section("acceptance criteria")
        for n in sorted(table):
            terminalreporter.write_line(table[n])
