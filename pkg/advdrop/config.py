"""Plain-text run configuration files."""
from collections import OrderedDict
import hashlib
import logging
from os import getenv

from .data import TASK_KINDS
from .training import TrainConfig

logger = logging.getLogger(__name__)

MODEL_KINDS = ('lstm', 'rnn')


class ConfigError(ValueError):
    """A configuration value or line is invalid.

    Arguments:
      message (:py:class:`str`): What is wrong.
      lineno (:py:class:`int`, optional): The offending line.
      key (:py:class:`str`, optional): The offending key.
      path (:py:class:`str`, optional): The file being read.

    """

    def __init__(self, message, lineno=None, key=None, path=None):
        self.message = message
        self.lineno = lineno
        self.key = key
        self.path = path
        super().__init__(message)

    def __str__(self):
        location = [str(part) for part in (self.path, self.lineno) if part is not None]
        return ':'.join(location + [' ' + self.message]) if location else self.message


def _format(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    return str(value)


class RunConfig(TrainConfig):
    """Everything needed to reproduce a run: data, model and training.

    Fields are :py:attr:`TrainConfig.FIELDS` preceded by the task, data,
    model and output fields below.

    """

    TASK_FIELDS = OrderedDict([
        ('task', (str, 'parity')),
        ('model', (str, 'lstm')),
        ('hidden_size', (int, 32)),
        ('train_size', (int, 200)),
        ('test_size', (int, 100)),
        ('validation_size', (int, 0)),
        ('length', (int, 8)),
        ('delay', (int, 0)),
        ('symbols', (int, 4)),
        ('side', (int, 8)),
        ('permutation_seed', (int, 0)),
        ('train_images', (str, '')),
        ('train_labels', (str, '')),
        ('test_images', (str, '')),
        ('test_labels', (str, '')),
        ('corpus', (str, '')),
        ('context', (int, 32)),
        ('checkpoint_every', (int, 0)),
        ('out', (str, 'runs/advdrop')),
    ])
    """Field name to ``(converter, default)`` for the non-training fields."""

    FIELDS = OrderedDict(list(TASK_FIELDS.items()) + list(TrainConfig.FIELDS.items()))

    CHOICES = dict(TrainConfig.CHOICES, task=TASK_KINDS, model=MODEL_KINDS)

    SEED_ENV_VAR = 'ADVDROP_SEED'
    """:py:class:`str`: Environment variable overriding the seed."""

    def validate(self):
        super().validate()
        for name in ('hidden_size', 'train_size', 'length', 'symbols', 'context'):
            if getattr(self, name) < 1:
                raise ValueError('{} must be positive: {!r}'.format(name, getattr(self, name)))
        for name in ('test_size', 'validation_size', 'checkpoint_every'):
            if getattr(self, name) < 0:
                raise ValueError('{} must be non-negative: {!r}'.format(
                    name, getattr(self, name),
                ))

    @classmethod
    def parse(cls, text, path=None):
        """Parse ``key = value`` lines.

        Blank lines and ``#`` comments are ignored.

        Raises:
          :py:class:`ConfigError`: For malformed lines, unknown or
            repeated keys, and invalid values.

        """
        values = OrderedDict()
        lines = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ConfigError('expected "key = value": {!r}'.format(line),
                                  lineno=lineno, path=path)
            key, value = (part.strip() for part in line.split('=', 1))
            if key not in cls.FIELDS:
                raise ConfigError('unknown key: {!r}'.format(key), lineno, key, path)
            if key in values:
                raise ConfigError('repeated key: {!r}'.format(key), lineno, key, path)
            converter = cls.FIELDS[key][0]
            try:
                values[key] = converter(value)
            except ValueError as error:
                raise ConfigError('bad value for {}: {}'.format(key, error),
                                  lineno, key, path) from error
            lines[key] = lineno
        try:
            return cls(**values)
        except ValueError as error:
            key = next((key for key in lines if key in str(error)), None)
            raise ConfigError(str(error), lines.get(key), key, path) from error

    @classmethod
    def load(cls, path):
        with open(path, encoding='utf-8') as handle:
            return cls.parse(handle.read(), path=path)

    @classmethod
    def from_env(cls, config=None):
        """Apply the :py:attr:`SEED_ENV_VAR` override, if it is set.

        Arguments:
          config (:py:class:`RunConfig`, optional): The configuration to
            override (defaults to all defaults).

        """
        if config is None:
            config = cls()
        seed = getenv(cls.SEED_ENV_VAR)
        if seed is None:
            return config
        logger.warning('%s overrides the configured seed: %s -> %s',
                       cls.SEED_ENV_VAR, config.seed, seed)
        try:
            return config.replace(seed=int(seed))
        except ValueError as error:
            raise ConfigError('bad {}: {!r}'.format(cls.SEED_ENV_VAR, seed),
                              key='seed') from error

    def override(self, values):
        """A copy with string ``values`` converted and applied.

        Raises:
          :py:class:`ConfigError`: For unknown keys or invalid values.

        """
        converted = {}
        for key, value in values.items():
            if key not in self.FIELDS:
                raise ConfigError('unknown key: {!r}'.format(key), key=key)
            try:
                converted[key] = self.FIELDS[key][0](value)
            except ValueError as error:
                raise ConfigError('bad value for {}: {}'.format(key, error),
                                  key=key) from error
        try:
            return self.replace(**converted)
        except ValueError as error:
            raise ConfigError(str(error)) from error

    def canonical(self):
        """Every field as ``key = value`` in declaration order."""
        return ''.join('{} = {}\n'.format(name, _format(value))
                       for name, value in self.as_dict().items())

    def digest(self):
        """SHA-256 of :py:meth:`canonical`, as hex."""
        return hashlib.sha256(self.canonical().encode('utf-8')).hexdigest()

    def train_config(self):
        """The :py:class:`~.TrainConfig` part of this configuration."""
        return TrainConfig(**{name: getattr(self, name) for name in TrainConfig.FIELDS})
