import pytest

from dsmpc.network import builtin_network, default_partition, per_junction_partition

# filled by test_acceptance.py, printed at the end of the run
CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def fig1():
    return builtin_network("fig1")


@pytest.fixture(scope="session")
def fig1_two(fig1):
    return default_partition(fig1)


@pytest.fixture(scope="session")
def fig1_per_junction(fig1):
    return per_junction_partition(fig1)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
