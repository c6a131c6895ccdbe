"""Shared pytest plumbing: acceptance verdicts are echoed in the terminal summary."""

import pytest

VERDICTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    """Record ``verdict(n, ok, detail)`` for criterion ``n``; the test still asserts on its own."""

    def record(n: int, ok: bool, detail: str) -> bool:
        VERDICTS[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, max(9, max(VERDICTS)) + 1):
        ok, detail = VERDICTS.get(n, (False, "no result recorded (not run or errored before a verdict)"))
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
