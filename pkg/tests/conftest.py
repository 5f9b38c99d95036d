"""Shared pytest wiring: the acceptance verdict summary block.

Acceptance tests append their one-line verdicts here; printing them via
the terminal reporter keeps them visible even under captured runs.
"""

VERDICT_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if VERDICT_LINES:
        terminalreporter.section("acceptance criteria")
        for line in VERDICT_LINES:
            terminalreporter.write_line(line)
