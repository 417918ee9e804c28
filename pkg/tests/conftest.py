from __future__ import annotations


def pytest_terminal_summary(terminalreporter):
    from .test_acceptance import ACCEPT_LINES

    if ACCEPT_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPT_LINES, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
