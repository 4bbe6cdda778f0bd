from pathlib import Path

import pytest

from delpattrib.lang import parse_program

HERE = Path(__file__).parent


@pytest.fixture(scope="session")
def running_example():
    return parse_program((HERE / "running_example.delp").read_text(encoding="utf-8"))


# one PASS/FAIL line per acceptance criterion, repeated at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
