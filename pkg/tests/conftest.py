import pytest

_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_recorder():
    """Collect one pass/fail line per acceptance criterion for the summary."""
    return _ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
