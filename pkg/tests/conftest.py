from __future__ import annotations

import functools
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

import acceptance_log  # noqa: E402
from lrmg import CovarianceModel, MultigridHierarchy, build_problem  # noqa: E402


@functools.lru_cache(maxsize=None)
def cached_setup(cov: str, sigma: float, b: float, level: int, p: int, m: int | None):
    """(problem, hierarchy) shared across tests; hierarchies are immutable during solves."""
    problem = build_problem(CovarianceModel(cov, sigma, b), level, p, m)
    return problem, MultigridHierarchy.from_problem(problem)


@pytest.fixture(scope="session")
def setup_cache():
    return cached_setup


def pytest_terminal_summary(terminalreporter):
    lines = acceptance_log.LINES
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])
