import pytest

_VERDICTS = {}


@pytest.fixture
def verdict():
    """Record one acceptance line: ``verdict(criterion, passed, detail)``."""

    def record(criterion: int, passed: bool, detail: str):
        _VERDICTS[criterion] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_VERDICTS):
        passed, detail = _VERDICTS[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if passed else 'FAIL'}  {detail}")
