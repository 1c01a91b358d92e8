import pytest

CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(k, title, ok, detail)``."""

    def record(k, title, ok, detail=""):
        line = f"AC{k:<2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        CRITERIA[k] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[k])
