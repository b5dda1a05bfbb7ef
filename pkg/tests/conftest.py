"""Shared pytest plumbing for the acceptance suite.

The acceptance tests each record a one-line verdict; printing them from
``pytest_terminal_summary`` keeps the lines visible even when pytest
captures per-test output.
"""

_criterion_lines: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    _criterion_lines[number] = f"CRITERION {number}: {status} - {detail}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _criterion_lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_criterion_lines):
            terminalreporter.write_line(_criterion_lines[number])
