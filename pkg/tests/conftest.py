import math

import numpy as np
import pytest

from nfmusic.array_model import ArrayConfig, WidebandGrid
from nfmusic.bench import preset

# acceptance results collected here and echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []

U45 = math.sin(math.pi / 4)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk():
    return preset("desk")


@pytest.fixture(scope="session")
def small_cfg():
    return ArrayConfig(32, 300e9)


@pytest.fixture(scope="session")
def small_grid(small_cfg):
    return WidebandGrid.for_array(small_cfg, 4, 30e9)


def window(center: float, half_cells: int, step: float, lo: float, hi: float) -> np.ndarray:
    """Slice of a uniform grid anchored at ``lo`` (same cells as the full grid)."""
    i0 = max(0, int(round((center - lo) / step)) - half_cells)
    i1 = min(int(round((hi - lo) / step)), int(round((center - lo) / step)) + half_cells)
    return lo + step * np.arange(i0, i1 + 1)
