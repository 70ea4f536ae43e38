import json
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from calderon_lab.geometry import build_grid, build_mask

# PASS/FAIL lines collected by the acceptance tests
ACCEPTANCE: list[str] = []

ORACLES = Path(__file__).parent / "oracles" / "frozen.json"

settings.register_profile("default", max_examples=25, deadline=None, derandomize="CALDERON_LAB_SEED" not in os.environ)
settings.load_profile("default")


@pytest.fixture(scope="session")
def frozen():
    return json.loads(ORACLES.read_text())


@pytest.fixture(scope="session")
def grid32():
    return build_grid(32)


@pytest.fixture(scope="session")
def grid64():
    return build_grid(64)


@pytest.fixture(scope="session")
def square64(grid64):
    return build_mask(grid64)


@pytest.fixture(scope="session")
def square32(grid32):
    return build_mask(grid32)


@pytest.fixture
def rng():
    return np.random.default_rng(int(os.environ.get("CALDERON_LAB_SEED", "0")))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
