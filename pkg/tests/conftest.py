"""Collects acceptance verdicts and prints one line per criterion after the run."""

import pytest

_VERDICTS: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def verdict():
    def record(number: int, name: str, ok: bool, detail: str = "") -> None:
        _VERDICTS[number] = (name, bool(ok), detail)
        line = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        name, ok, detail = _VERDICTS[number]
        terminalreporter.write_line(
            f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
        )
