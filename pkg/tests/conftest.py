"""Shared pytest plumbing.

The acceptance tests record one line per criterion in ACCEPTANCE_RESULTS;
this hook prints them as a summary section at the end of the run so the
pass/fail status of every criterion is visible even when all tests pass.
"""

ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
