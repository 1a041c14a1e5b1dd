import logging

import pytest

from advdrop.config import ConfigError, RunConfig
from advdrop.training import TrainConfig

from tests.helpers import config_text


def test_parse():
    text = '# a run\n\ntask = copy\nhidden_size = 16  # small\nfd_symmetric = no\ndelta=0.1\n'
    config = RunConfig.parse(text)
    assert config.task == 'copy'
    assert config.hidden_size == 16
    assert config.fd_symmetric is False
    assert config.delta == 0.1
    assert config.model == 'lstm'


def test_unknown_key_has_line_number():
    with pytest.raises(ConfigError) as excinfo:
        RunConfig.parse(config_text(task='copy', learning_rate=0.1), path='run.cfg')
    error = excinfo.value
    assert (error.lineno, error.key, error.path) == (2, 'learning_rate', 'run.cfg')
    assert str(error).startswith('run.cfg:2:')


@pytest.mark.parametrize('text, lineno', [
    ('task = copy\nnot a pair\n', 2),
    ('epochs = 3\nepochs = 4\n', 2),
    ('\nhidden_size = many\n', 2),
    ('regularizer = vd\n', 1),
    ('task = copy\n\nmodel = gru\n', 3),
])
def test_parse_errors(text, lineno):
    with pytest.raises(ConfigError) as excinfo:
        RunConfig.parse(text)
    assert excinfo.value.lineno == lineno


def test_load(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text(config_text(epochs=3, regularizer='add'))
    config = RunConfig.load(str(path))
    assert config.epochs == 3
    assert config.regularizer == 'add'


def test_canonical_round_trip():
    config = RunConfig(task='copy', lr=0.0025, fd_symmetric=False)
    assert RunConfig.parse(config.canonical()) == config
    assert 'fd_symmetric = false\n' in config.canonical()
    assert config.canonical().splitlines()[0] == 'task = copy'


def test_digest():
    config = RunConfig()
    assert len(config.digest()) == 64
    assert config.digest() == RunConfig().digest()
    assert config.digest() != config.replace(seed=1).digest()


def test_from_env(monkeypatch, caplog):
    monkeypatch.setenv(RunConfig.SEED_ENV_VAR, '42')
    with caplog.at_level(logging.WARNING):
        config = RunConfig.from_env(RunConfig(seed=3))
    assert config.seed == 42
    assert 'overrides the configured seed' in caplog.text


def test_from_env_unset(monkeypatch):
    monkeypatch.delenv(RunConfig.SEED_ENV_VAR, raising=False)
    assert RunConfig.from_env() == RunConfig()


def test_from_env_invalid(monkeypatch):
    monkeypatch.setenv(RunConfig.SEED_ENV_VAR, 'forty')
    with pytest.raises(ConfigError):
        RunConfig.from_env()


def test_override():
    config = RunConfig().override({'epochs': '5', 'metric': 'l2'})
    assert (config.epochs, config.metric) == (5, 'l2')
    with pytest.raises(ConfigError):
        RunConfig().override({'colour': 'red'})
    with pytest.raises(ConfigError):
        RunConfig().override({'epochs': 'five'})
    with pytest.raises(ConfigError):
        RunConfig().override({'epochs': '0'})


def test_validation():
    with pytest.raises(ValueError):
        RunConfig(hidden_size=0)
    with pytest.raises(ValueError):
        RunConfig(validation_size=-1)


def test_train_config():
    config = RunConfig(task='copy', lr=0.5, regularizer='el')
    train = config.train_config()
    assert isinstance(train, TrainConfig)
    assert train == TrainConfig(lr=0.5, regularizer='el')
