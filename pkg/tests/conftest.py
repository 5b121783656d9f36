import pytest

ACCEPTANCE_LINES = {}


@pytest.fixture
def verdict():
    """Record the one-line outcome of an acceptance criterion."""

    def record(criterion: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE_LINES[criterion] = f"{criterion} {'PASS' if passed else 'FAIL'}: {detail}"
        print(ACCEPTANCE_LINES[criterion])
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda c: int(c[1:])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
