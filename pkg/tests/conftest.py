import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from elbpeg.nkhabits import DESK, build_model  # noqa: E402


@pytest.fixture(scope="session")
def desk():
    return DESK


@pytest.fixture(scope="session")
def desk_model():
    return build_model(DESK)
