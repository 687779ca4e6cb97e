import pytest

from flightenv.envelope import GridSpec, sweep_slice
from flightenv.model import default_params

_ACCEPTANCE = []


@pytest.fixture(scope="session")
def params():
    return default_params()


@pytest.fixture(scope="session")
def desk_grid():
    return GridSpec.desk()


@pytest.fixture(scope="session")
def nominal_slice(desk_grid):
    """Unimpaired sea-level, level-flight slice on the desk grid."""
    return sweep_slice(0.0, 0.0, desk_grid)


@pytest.fixture(scope="session")
def small_grid():
    return GridSpec.desk(V_step=20.0, psidot_step=4.0)


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(tag: str, ok: bool, detail: str = ""):
        line = f"{tag}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
