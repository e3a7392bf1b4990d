from __future__ import annotations

import pytest

from probery.harness import build_default_table

_criterion_lines: list[str] = []


@pytest.fixture
def criterion_report():
    """Collects acceptance pass lines for the terminal summary."""

    def record(line: str) -> None:
        _criterion_lines.append(line)
        print(f"\n{line}")

    return record


def pytest_terminal_summary(terminalreporter):
    if _criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in _criterion_lines:
            terminalreporter.line(line)


@pytest.fixture(scope="session")
def default_table(tmp_path_factory):
    """Desk-scale table used by the acceptance suite: 3x5 dims, 250k records."""
    directory = tmp_path_factory.mktemp("default_table") / "t"
    return build_default_table(directory, records=250_000, n=500, seed=20240811)


@pytest.fixture(scope="session")
def small_table(tmp_path_factory):
    """Lighter variant of the default table for unit-level checks."""
    directory = tmp_path_factory.mktemp("small_table") / "t"
    return build_default_table(directory, records=40_000, n=500, seed=7)
