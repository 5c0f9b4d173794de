"""Shared pytest wiring.

The acceptance tests record one line per criterion; this hook replays them
in a dedicated section after the normal summary so the verdicts stay visible
even when output capture is on.
"""

ACCEPTANCE_LINES = []


def record_criterion(number, name, ok, detail):
    line = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
