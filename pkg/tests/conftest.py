import pytest

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; returns the pass flag for asserting."""
    def record(num: int, passed: bool, detail: str) -> bool:
        line = f"criterion {num:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA[num] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for num in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[num])
