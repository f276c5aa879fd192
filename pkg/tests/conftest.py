import pytest

from tracephase import build_field


@pytest.fixture(scope="session")
def rationals():
    return build_field([0, 1])


@pytest.fixture(scope="session")
def sqrt2():
    return build_field([-2, 0, 1])


@pytest.fixture(scope="session")
def gaussian():
    return build_field([1, 0, 1])


@pytest.fixture(scope="session")
def cbrt2():
    return build_field([-2, 0, 0, 1])


@pytest.fixture(scope="session")
def fields(rationals, sqrt2, gaussian, cbrt2):
    return {"Q": rationals, "Q(sqrt2)": sqrt2, "Q(i)": gaussian, "Q(cbrt2)": cbrt2}


_ACCEPTANCE: list[str] = []


class AcceptanceRecorder:
    def record(self, criterion: int, passed: bool, detail: str) -> None:
        line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceRecorder()


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
