import pytest

# one line per acceptance criterion, echoed again at the end of the run
CRITERIA: dict[int, str] = {}


@pytest.fixture
def record():
    def _record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        CRITERIA[number] = line
        print("\n" + line)
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
