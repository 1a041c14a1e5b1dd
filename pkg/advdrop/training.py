"""Optimizers, gradient clipping and the regularized training loop."""
from collections import OrderedDict, namedtuple
import logging

import numpy as np

from .core import NumericalError
from .distances import METRICS, LambdaSchedule, sequence_distance
from .masks import BASE_POLICIES, INIT_POLICIES, AdvConfig, DropoutMask, sample_mask
from .models import SequenceBatch, cross_entropy, forward_sequence
from .regularizers import SEARCHES, add_regularizer

logger = logging.getLogger(__name__)

EPSILON = 1e-8

OPTIMIZERS = ('rmsprop', 'adam')

LR_SCHEDULES = ('constant', 'linear', 'exponential')

REGULARIZERS = ('none', 'el', 'fd', 'add')


def boolean(value):
    """Parse a boolean configuration value."""
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ('1', 'true', 'yes', 'on'):
        return True
    if text in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError('not a boolean: {!r}'.format(value))


class DivergenceError(ArithmeticError):
    """The training loss stopped being finite.

    Arguments:
      batch (:py:class:`int`): Index of the batch within its epoch.
      components (:py:class:`dict`): The loss components at that batch.

    """

    def __init__(self, batch, components):
        self.batch = batch
        self.components = components
        super().__init__('non-finite loss at batch {}: {}'.format(
            batch,
            ', '.join('{}={!r}'.format(key, value) for key, value in components.items()),
        ))


class TrainConfig:
    """Hyperparameters of one training run.

    Arguments:
      **values: Field values; anything not given takes its default.

    Raises:
      :py:class:`ValueError`: For unknown fields or invalid values.

    """

    FIELDS = OrderedDict([
        ('optimizer', (str, 'rmsprop')),
        ('rho', (float, 0.5)),
        ('beta1', (float, 0.9)),
        ('beta2', (float, 0.999)),
        ('lr', (float, 0.001)),
        ('lr_schedule', (str, 'linear')),
        ('anneal_epochs', (int, 50)),
        ('decay_rate', (float, 0.9999)),
        ('clip_norm', (float, 1.0)),
        ('epochs', (int, 20)),
        ('batch_size', (int, 32)),
        ('seed', (int, 0)),
        ('regularizer', (str, 'none')),
        ('reg_weight', (float, 1.0)),
        ('p', (float, 0.1)),
        ('input_p', (float, 0.0)),
        ('delta', (float, 0.03)),
        ('k', (int, 2)),
        ('base_policy', (str, 'expected')),
        ('init', (str, 'flip')),
        ('search', (str, 'greedy')),
        ('lambda_schedule', (str, 'last')),
        ('metric', (str, 'js')),
        ('fd_symmetric', (boolean, True)),
    ])
    """Field name to ``(converter, default)``, in canonical order."""

    CHOICES = dict(
        optimizer=OPTIMIZERS,
        lr_schedule=LR_SCHEDULES,
        regularizer=REGULARIZERS,
        base_policy=BASE_POLICIES,
        init=INIT_POLICIES,
        search=SEARCHES,
        lambda_schedule=LambdaSchedule.NAMES,
        metric=METRICS,
    )

    def __init__(self, **values):
        unknown = set(values) - set(self.FIELDS)
        if unknown:
            raise ValueError('unknown fields: {!r}'.format(sorted(unknown)))
        for name, (converter, default) in self.FIELDS.items():
            setattr(self, name, converter(values.get(name, default)))
        self.validate()

    def __eq__(self, other):
        return type(self) is type(other) and self.as_dict() == other.as_dict()

    def __repr__(self):
        return '{}({})'.format(self.__class__.__name__, ', '.join(
            '{}={!r}'.format(name, value) for name, value in self.as_dict().items()
        ))

    def as_dict(self):
        return OrderedDict((name, getattr(self, name)) for name in self.FIELDS)

    def replace(self, **values):
        """A copy with some fields changed."""
        merged = self.as_dict()
        merged.update(values)
        return type(self)(**merged)

    def validate(self):
        for name, choices in self.CHOICES.items():
            if getattr(self, name) not in choices:
                raise ValueError('{} must be one of {!r}: {!r}'.format(
                    name, choices, getattr(self, name),
                ))
        if self.lr <= 0:
            raise ValueError('lr must be positive: {!r}'.format(self.lr))
        if self.clip_norm <= 0:
            raise ValueError('clip_norm must be positive: {!r}'.format(self.clip_norm))
        if self.epochs < 1:
            raise ValueError('epochs must be at least 1: {!r}'.format(self.epochs))
        if self.batch_size < 1:
            raise ValueError('batch_size must be at least 1: {!r}'.format(self.batch_size))
        if self.anneal_epochs < 1:
            raise ValueError('anneal_epochs must be at least 1: {!r}'.format(
                self.anneal_epochs,
            ))
        if self.reg_weight < 0:
            raise ValueError('reg_weight must be non-negative: {!r}'.format(self.reg_weight))
        if not 0.0 <= self.rho < 1.0:
            raise ValueError('rho must be in [0, 1): {!r}'.format(self.rho))
        for name in ('p', 'input_p'):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError('{} must be in [0, 1): {!r}'.format(name, getattr(self, name)))
        self.adv_config()

    def adv_config(self):
        return AdvConfig(self.delta, self.k)

    def schedule(self, length):
        return LambdaSchedule.named(self.lambda_schedule, length)


class TrainState:
    """Everything that changes during training.

    Arguments:
      model (:py:class:`~.BaseModel`): The model being trained (updated
        in place).
      config (:py:class:`TrainConfig`): The hyperparameters.
      rng (:py:class:`numpy.random.Generator`, optional): Source of all
        shuffling and mask randomness (seeded from ``config.seed`` by
        default).

    Attributes:
      slots (:py:class:`dict`): Per-parameter optimizer moving averages.
      step (:py:class:`int`): Optimizer steps taken.
      epoch (:py:class:`int`): Epochs completed.
      history (:py:class:`list`): One :py:class:`EpochMetrics` per epoch.

    """

    def __init__(self, model, config, rng=None):
        self.model = model
        self.config = config
        self.rng = np.random.default_rng(config.seed) if rng is None else rng
        names = ('m', 'v') if config.optimizer == 'adam' else ('v',)
        self.slots = {
            name: {slot: np.zeros_like(value) for slot in names}
            for name, value in model.params.items()
        }
        self.step = 0
        self.epoch = 0
        self.history = []

    def __repr__(self):
        return 'TrainState(model={!r}, step={}, epoch={})'.format(
            self.model, self.step, self.epoch,
        )


EpochMetrics = namedtuple(
    'EpochMetrics', 'epoch train_loss reg_value val_error test_error',
)
"""One row of the metrics CSV."""

EpochSummary = namedtuple('EpochSummary', 'train_loss reg_value hamming')
"""Mean loss, mean regularizer value and per-batch adversarial distances."""


def learning_rate(config, epoch, step):
    """The learning rate for ``epoch`` (zero-based) and optimizer ``step``.

    ``linear`` holds the initial rate, then decreases it linearly over the
    last ``anneal_epochs`` epochs so it would reach zero after the final
    one; ``exponential`` multiplies by ``decay_rate`` every step.

    """
    if config.lr_schedule == 'constant':
        return config.lr
    if config.lr_schedule == 'exponential':
        return config.lr * config.decay_rate ** step
    anneal = min(config.anneal_epochs, config.epochs)
    return config.lr * min(1.0, (config.epochs - epoch) / anneal)


def clip_gradients(grads, max_norm):
    """Rescale ``grads`` so their global L2 norm is at most ``max_norm``.

    Arguments:
      grads (:py:class:`dict`): Parameter name to gradient array.
      max_norm (:py:class:`float`): The norm limit.

    Returns:
      :py:class:`collections.OrderedDict`: The (possibly scaled) gradients.

    """
    if max_norm <= 0:
        raise ValueError('max_norm must be positive: {!r}'.format(max_norm))
    norm = np.sqrt(sum(float((grad ** 2).sum()) for grad in grads.values()))
    if norm <= max_norm:
        return OrderedDict(grads)
    factor = max_norm / norm
    logger.debug('clipping gradient norm %.4g to %.4g', norm, max_norm)
    return OrderedDict((name, grad * factor) for name, grad in grads.items())


def optimizer_step(state, grads):
    """Apply one RMSProp or Adam update to ``state.model``.

    Arguments:
      state (:py:class:`TrainState`): Updated in place.
      grads (:py:class:`dict`): Parameter name to gradient array.

    Returns:
      :py:class:`TrainState`: The same state.

    Raises:
      :py:class:`~.NumericalError`: If a gradient isn't finite.

    """
    for name, grad in grads.items():
        if not np.isfinite(grad).all():
            raise NumericalError(name, 'non-finite gradient')
    config = state.config
    lr = learning_rate(config, state.epoch, state.step)
    count = state.step + 1
    for name, grad in grads.items():
        slots = state.slots[name]
        if config.optimizer == 'rmsprop':
            slots['v'] = config.rho * slots['v'] + (1.0 - config.rho) * grad ** 2
            update = grad / (np.sqrt(slots['v']) + EPSILON)
        else:
            slots['m'] = config.beta1 * slots['m'] + (1.0 - config.beta1) * grad
            slots['v'] = config.beta2 * slots['v'] + (1.0 - config.beta2) * grad ** 2
            m_hat = slots['m'] / (1.0 - config.beta1 ** count)
            v_hat = slots['v'] / (1.0 - config.beta2 ** count)
            update = m_hat / (np.sqrt(v_hat) + EPSILON)
        state.model.params[name] = state.model.params[name] - lr * update
    state.step = count
    return state


def _input_mask(config, model, rng):
    if config.input_p > 0:
        return sample_mask(config.input_p, model.input_size, rng)
    return None


def _dropout_mask(config, model, rng):
    if config.p > 0:
        return sample_mask(config.p, model.hidden_size, rng)
    return DropoutMask.expected(model.hidden_size)


def batch_loss(state, batch):
    """Record the regularized loss of one batch on a fresh tape.

    Returns:
      :py:class:`tuple`: ``(graph, weights, total, components, hamming)``;
      ``hamming`` is the adversarial mask's distance from the base mask,
      or ``None`` for other regularizers.

    """
    config, model, rng = state.config, state.model, state.rng
    kind = config.regularizer if config.reg_weight else 'none'
    schedule = config.schedule(batch.length)
    reg = hamming = None
    if kind == 'add':
        term = add_regularizer(model, batch, config.adv_config(), schedule,
                               config.metric, rng, base_policy=config.base_policy,
                               p=config.p, init=config.init, search=config.search,
                               input_p=config.input_p)
        graph, weights = term.graph, term.base_trace.weights
        task = cross_entropy(term.base_trace, batch)
        reg = term.node
        hamming = term.mask.hamming(term.base)
    else:
        trace = forward_sequence(model, batch, _dropout_mask(config, model, rng),
                                 input_mask=_input_mask(config, model, rng))
        graph, weights = trace.graph, trace.weights
        task = cross_entropy(trace, batch)
        if kind == 'el':
            reg = sequence_distance(model.predict(batch.inputs), trace, schedule,
                                    config.metric)
        elif kind == 'fd':
            other = forward_sequence(model, batch, _dropout_mask(config, model, rng),
                                     graph, weights,
                                     input_mask=_input_mask(config, model, rng))
            task = graph.scale(graph.add(task, cross_entropy(other, batch)), 0.5)
            reg = sequence_distance(trace, other, schedule, config.metric,
                                    detach=not config.fd_symmetric)
    total = task if reg is None else graph.add(task, graph.scale(reg, config.reg_weight))
    components = OrderedDict(
        task=float(graph.value(task)),
        reg=0.0 if reg is None else float(graph.value(reg)),
    )
    return graph, weights, total, components, hamming


def train_epoch(state, batches):
    """Run one pass of regularized training over ``batches``.

    Each batch adds ``reg_weight`` times the regularizer to the task
    cross-entropy, backpropagates, clips and takes an optimizer step.

    Arguments:
      state (:py:class:`TrainState`): Updated in place.
      batches: An iterable of :py:class:`~.SequenceBatch`.

    Returns:
      :py:class:`tuple`: The state and an :py:class:`EpochSummary`.

    Raises:
      :py:class:`DivergenceError`: If a batch loss isn't finite.

    """
    losses, regs, distances = [], [], []
    for index, batch in enumerate(batches):
        graph, weights, total, components, hamming = batch_loss(state, batch)
        value = float(graph.value(total))
        if not np.isfinite(value):
            logger.error('divergence at epoch %d batch %d: %r',
                         state.epoch, index, dict(components))
            raise DivergenceError(index, components)
        graph.backward(total)
        grads = OrderedDict((name, graph.grad(node)) for name, node in weights.items())
        optimizer_step(state, clip_gradients(grads, state.config.clip_norm))
        losses.append(value)
        regs.append(components['reg'])
        if hamming is not None:
            distances.append(hamming)
            logger.debug('batch %d: loss %.6g task %.6g reg %.6g hamming %d',
                         index, value, components['task'], components['reg'], hamming)
        else:
            logger.debug('batch %d: loss %.6g task %.6g reg %.6g',
                         index, value, components['task'], components['reg'])
    return state, EpochSummary(
        float(np.mean(losses)) if losses else float('nan'),
        float(np.mean(regs)) if regs else float('nan'),
        distances,
    )


def _as_batches(dataset):
    return [dataset] if isinstance(dataset, SequenceBatch) else dataset


def error_counts(model, batch, mask=None):
    """Misclassified and total label counts of ``batch``.

    Arguments:
      model (:py:class:`~.BaseModel`): The model.
      batch (:py:class:`~.SequenceBatch`): The labelled inputs.
      mask (:py:class:`~.DropoutMask`, optional): A recurrent mask to
        evaluate under (the expected network by default).

    Returns:
      :py:class:`tuple`: ``(wrong, total)``; every step counts for
      per-step tasks.

    """
    if mask is None:
        predictions = model.predict(batch.inputs)
    else:
        predictions = model.predict(batch.inputs, mask.bits, mask.scale)
    predictions = predictions.argmax(axis=-1)
    if batch.kind == 'final':
        mistakes = predictions[-1] != batch.targets
    else:
        mistakes = predictions != batch.targets.T
    return int(np.count_nonzero(mistakes)), mistakes.size


def evaluate(model, dataset):
    """Error rate of the expected (unmasked, unscaled) network.

    Arguments:
      model (:py:class:`~.BaseModel`): The model.
      dataset: A :py:class:`~.SequenceBatch` or an iterable of them.

    Returns:
      :py:class:`float`: Misclassified over total.

    """
    wrong = total = 0
    for batch in _as_batches(dataset):
        batch_wrong, batch_total = error_counts(model, batch)
        wrong += batch_wrong
        total += batch_total
    if not total:
        raise ValueError('cannot evaluate an empty dataset')
    return wrong / total


def perplexity(model, dataset):
    """``exp`` of the mean per-step negative log-likelihood.

    Only meaningful for per-step tasks such as character language
    modelling; final-step tasks score the last step only.

    """
    nll = count = 0.0
    for batch in _as_batches(dataset):
        predictions = model.predict(batch.inputs)
        if batch.kind == 'final':
            picked = predictions[-1, np.arange(len(batch)), batch.targets]
        else:
            steps = np.arange(batch.length)[:, None]
            rows = np.arange(len(batch))[None, :]
            picked = predictions[steps, rows, batch.targets.T]
        nll -= np.log(np.maximum(picked, np.finfo(np.float64).tiny)).sum()
        count += picked.size
    return float(np.exp(nll / count))


def fit(state, train, validation=None, test=None, callback=None):
    """Train until ``config.epochs`` epochs are complete.

    Arguments:
      state (:py:class:`TrainState`): The run state (resumes from
        ``state.epoch``).
      train (:py:class:`~.SequenceTask`): Shuffled into batches each epoch.
      validation (:py:class:`~.SequenceTask`, optional): Scored each epoch.
      test (:py:class:`~.SequenceTask`, optional): Scored each epoch.
      callback (:py:class:`collections.abc.Callable`, optional): Called
        as ``callback(state, metrics)`` after every epoch.

    Returns:
      :py:class:`TrainState`: The trained state.

    """
    config = state.config
    if config.regularizer == 'add':
        config.adv_config().stalls(state.model.hidden_size, config.init)
    while state.epoch < config.epochs:
        batches = train.batches(config.batch_size, state.rng)
        state, summary = train_epoch(state, batches)
        metrics = EpochMetrics(
            epoch=state.epoch + 1,
            train_loss=summary.train_loss,
            reg_value=summary.reg_value,
            val_error=float('nan') if validation is None else evaluate(
                state.model, validation.batches(config.batch_size),
            ),
            test_error=float('nan') if test is None else evaluate(
                state.model, test.batches(config.batch_size),
            ),
        )
        state.epoch += 1
        state.history.append(metrics)
        logger.info('epoch %d: loss %.6g reg %.6g val %.4f test %.4f',
                    metrics.epoch, metrics.train_loss, metrics.reg_value,
                    metrics.val_error, metrics.test_error)
        if callback is not None:
            callback(state, metrics)
    return state
