from __future__ import annotations

import pytest

_LINES: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    """Record one summary line per acceptance criterion; the lines are also
    echoed in the terminal summary so they survive output capture."""

    def record(label: str, ok: bool, detail: str = "") -> bool:
        line = f"{label}: {'PASS' if ok else 'FAIL'}" + (f"  ({detail})" if detail else "")
        _LINES.append(line)
        print(line)
        return ok

    return record


@pytest.fixture(scope="session")
def info():
    def record(label: str, detail: str) -> None:
        line = f"{label}: INFO  ({detail})"
        _LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
