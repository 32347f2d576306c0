"""Shared fixtures: acceptance verdict registry echoed after the run."""

import sys

import pytest

_verdicts: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    """Record and emit one pass/fail line per acceptance criterion."""

    def _verdict(idx: int, label: str, ok: bool, detail: str = "") -> bool:
        line = f"[acceptance {idx}] {label}: {'PASS' if ok else 'FAIL'}"
        if detail:
            line += f"  ({detail})"
        _verdicts.append(line)
        sys.__stdout__.write(line + "\n")
        sys.__stdout__.flush()
        return ok

    return _verdict


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _verdicts:
        terminalreporter.section("acceptance verdicts")
        for line in sorted(_verdicts):
            terminalreporter.write_line(line)
