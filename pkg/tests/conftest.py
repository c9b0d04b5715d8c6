import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make tests/helpers.py importable

from d2ibc import NormConstants


@pytest.fixture
def unit_norm():
    return NormConstants.ones(1, 1)
