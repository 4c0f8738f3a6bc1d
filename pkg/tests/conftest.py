import pytest

from tnntpos.scenario import Scenario, build_world


SMALL = dict(num_subcarriers=64, num_symbols=8)


@pytest.fixture(scope="session")
def small_scenario():
    return Scenario(**SMALL)


@pytest.fixture(scope="session")
def small_world(small_scenario):
    return build_world(small_scenario)


@pytest.fixture(scope="session")
def desk_world():
    from tnntpos.harness import DESK_PROFILE

    return build_world(Scenario(**DESK_PROFILE))


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(name, ok, detail):
        ACCEPTANCE_LINES.append(f"{name} {'PASS' if ok else 'FAIL'}: {detail}")
        print(ACCEPTANCE_LINES[-1])
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
