import pathlib
import sys

import pytest

sys.path.insert(0, str(pathlib.Path(__file__).parent))

from orthant_ld.model import NetworkModel  # noqa: E402

ROOT = pathlib.Path(__file__).resolve().parents[1]

MM1_MEASURES = {frozenset({0}): {(1,): 1.0, (-1,): 2.0}, frozenset(): {(1,): 1.0}}
TANDEM_MEASURES = {
    frozenset({0, 1}): {(1, 0): 1.0, (-1, 1): 2.0, (0, -1): 3.0},
    frozenset({0}): {(1, 0): 1.0, (-1, 1): 2.0},
    frozenset({1}): {(1, 0): 1.0, (0, -1): 3.0},
    frozenset(): {(1, 0): 1.0},
}


@pytest.fixture(scope="session")
def mm1():
    return NetworkModel(1, MM1_MEASURES)


@pytest.fixture(scope="session")
def tandem():
    return NetworkModel(2, TANDEM_MEASURES)


@pytest.fixture(scope="session")
def model_dir():
    return ROOT / "models"


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
