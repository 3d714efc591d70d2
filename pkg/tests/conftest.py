import pytest

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_line():
    """Record a one-line acceptance verdict; the lines are echoed in the terminal summary."""
    def record(criterion: int, ok: bool, detail: str, tolerance: str):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} | {detail} | tolerance: {tolerance}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
