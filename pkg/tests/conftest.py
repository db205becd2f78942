"""Collects acceptance verdicts and prints them after the run.

Each acceptance test calls ``verdict(...)``; the lines appear in the terminal
summary even when output capture is on.
"""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
