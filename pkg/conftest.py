import numpy as np
import pytest

from advdrop.models import Lstm, SequenceBatch, SimpleRnn


def pytest_addoption(parser):
    parser.addoption(
        "--runslow",
        action="store_true",
        help="run slow tests"
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale acceptance runs")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="need --runslow option to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def rnn(rng):
    return SimpleRnn.initialise(2, 4, 3, rng)


@pytest.fixture
def lstm(rng):
    return Lstm.initialise(2, 4, 3, rng)


@pytest.fixture(params=[SimpleRnn, Lstm], ids=['rnn', 'lstm'])
def model(request, rng):
    return request.param.initialise(2, 4, 3, rng)


@pytest.fixture
def batch(rng):
    return SequenceBatch(rng.uniform(-1, 1, (3, 2, 2)), [0, 2])


@pytest.fixture
def per_step_batch(rng):
    return SequenceBatch(rng.uniform(-1, 1, (3, 2, 2)), [[0, 1, 2], [2, 2, 1]],
                         kind='per_step')
