"""Shared test plumbing: the acceptance-criterion reporter.

Criterion results are echoed in a terminal summary section so they stay
visible in captured runs (plain `pytest -v`), one line per criterion.
"""

import pytest

_CRITERION_LINES = []


@pytest.fixture
def criterion():
    def _report(n: int, ok: bool, detail: str) -> None:
        line = f"[criterion {n:02d}] {'PASS' if ok else 'FAIL'}: {detail}"
        print(line)
        _CRITERION_LINES.append(line)
        assert ok, line

    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERION_LINES:
            terminalreporter.write_line(line)
