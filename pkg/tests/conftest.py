import json
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"

_CRITERIA: dict[int, str] = {}


@pytest.fixture(scope="session")
def pilot():
    """Committed pilot-run values (with seeds) that pin Monte Carlo thresholds."""
    return json.loads((FIXTURES / "pilot.json").read_text())


@pytest.fixture
def criterion():
    """``criterion(number, ok, detail)`` prints one PASS/FAIL line and asserts ``ok``."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
