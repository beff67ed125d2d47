import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # makes `import oracles` work

from sorb.gridworld import builtin_map


@pytest.fixture(scope="session")
def u_maze():
    return builtin_map("u_maze")


@pytest.fixture(scope="session")
def four_rooms():
    return builtin_map("four_rooms")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
