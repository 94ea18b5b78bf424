import json
from pathlib import Path

import pytest

FROZEN = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())
CRITERIA = {}


@pytest.fixture(scope="session")
def frozen():
    return FROZEN


@pytest.fixture
def report(capsys):
    """report(n, passed, detail): one pass/fail line per acceptance criterion."""

    def emit(n, passed, detail):
        line = f"criterion {n}: {'PASS' if passed else 'FAIL'} | {detail}"
        CRITERIA[n] = line
        with capsys.disabled():
            print(f"\n{line}")

    return emit


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
