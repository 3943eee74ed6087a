"""Collects one verdict line per acceptance criterion and prints them after the run."""

import contextlib
import time

import pytest

VERDICTS = {}


@contextlib.contextmanager
def _criterion(number: int, title: str):
    detail = {}
    started = time.perf_counter()
    try:
        yield detail
    except BaseException as exc:
        if not isinstance(exc, pytest.skip.Exception):
            VERDICTS[number] = (False, title, detail, time.perf_counter() - started, f"{type(exc).__name__}: {exc}")
        raise
    VERDICTS[number] = (True, title, detail, time.perf_counter() - started, "")


@pytest.fixture
def criterion():
    return _criterion


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        ok, title, detail, seconds, error = VERDICTS[number]
        facts = ", ".join(f"{k}={v}" for k, v in detail.items())
        line = f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title} ({seconds:.1f}s)"
        terminalreporter.write_line(line + (f": {facts}" if facts else ""))
        if error:
            terminalreporter.write_line(f"          {error.splitlines()[0][:200]}")
