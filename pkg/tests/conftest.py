import os

import pytest

from fracest.montecarlo import make_rng
from fracest.schemas import DEFAULT_SEED, McConfig

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture
def rng():
    return make_rng(DEFAULT_SEED, 999)


@pytest.fixture
def uniform_sample_path():
    return os.path.join(FIXTURES, "uniform_sample.csv")


@pytest.fixture
def pairs_path():
    return os.path.join(FIXTURES, "pairs.csv")


@pytest.fixture
def small_mc():
    return McConfig(reps=400, seed=DEFAULT_SEED)


@pytest.fixture
def write_text(tmp_path):
    def _write(name, text):
        path = tmp_path / name
        path.write_text(text)
        return str(path)
    return _write
