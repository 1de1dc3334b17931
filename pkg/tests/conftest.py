"""Shared test plumbing: the acceptance summary block.

Acceptance tests record one line per criterion through the `acceptance_log`
fixture; the hook below replays them at the end of the terminal output so the
pass/fail table is visible even when every test passes.
"""

import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    def record(number: int, name: str, ok: bool, detail: str = "") -> None:
        verdict = "PASS" if ok else "FAIL"
        suffix = f"  [{detail}]" if detail else ""
        ACCEPTANCE_LINES.append(f"criterion {number:2d} {name:<38s} {verdict}{suffix}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
