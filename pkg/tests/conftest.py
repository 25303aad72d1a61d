import pytest

_RESULTS = []


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(name, passed, detail)."""
    def record(name, passed, detail=""):
        _RESULTS.append((name, bool(passed), detail))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _RESULTS:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
