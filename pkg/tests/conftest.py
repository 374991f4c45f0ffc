import pytest

ACCEPTANCE = {}


def record(criterion: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = f"criterion {criterion:2d} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    print(ACCEPTANCE[criterion])


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
