"""Shared pytest plumbing.

The verification battery registers one formatted line per numbered check
here; the terminal-summary hook replays them as a single block so the
pass/fail ledger is visible even under default output capture.
"""
from __future__ import annotations

BATTERY_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not BATTERY_LINES:
        return
    terminalreporter.section("verification battery")
    for line in BATTERY_LINES:
        terminalreporter.write_line(line)
