"""Shared pytest hooks for the suite.

The acceptance tests register one outcome per criterion here; a terminal
summary section prints one pass/fail line per criterion at the end of the
run, whatever the capture settings.
"""

_CRITERIA: dict[int, tuple[str, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    _CRITERIA[int(number)] = ("PASS" if ok else "FAIL", detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, 10):
        status, detail = _CRITERIA.get(number, ("NOT RUN", ""))
        suffix = f" -- {detail}" if detail else ""
        terminalreporter.write_line(f"criterion {number}: {status}{suffix}")
