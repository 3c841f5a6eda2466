"""Collects one summary line per acceptance criterion for the terminal report."""

import contextlib

LINES: dict[int, str] = {}


def record(number: int, passed: bool, detail: str) -> None:
    LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"


@contextlib.contextmanager
def guard(number: int):
    """Record a FAIL line if the body raises before recording a result."""
    try:
        yield
    except Exception as exc:
        if number not in LINES:
            record(number, False, f"error: {type(exc).__name__}: {exc}")
        raise
