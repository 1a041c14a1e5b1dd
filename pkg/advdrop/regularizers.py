"""Dropout regularizers and checks of the relations between them.

* EL: distance between the expected (full) network and randomly masked
  networks.
* FD: distance between two independently masked networks.
* AdD: distance between the base network and its budget-constrained
  worst-case masked network.

The Monte Carlo estimators run on the array path and return an
:py:class:`Estimate`; :py:func:`add_regularizer` records its term on a tape
so it can be trained against.

"""
from collections import namedtuple
import logging

import numpy as np

from .core import TapeGraph
from .distances import (  # pylint: disable=unused-import
    METRICS,
    LambdaSchedule,
    distance,
    sequence_distance,
    weighted_distance,
)
from .masks import (
    AdvConfig,
    DropoutMask,
    adversarial_mask,
    base_mask,
    brute_force_adversarial,
    sample_constrained,
    sample_mask,
)
from .models import forward_sequence, keep_scale

logger = logging.getLogger(__name__)

MIN_REMARK_SAMPLES = 30

SEARCHES = ('greedy', 'exact')

Estimate = namedtuple('Estimate', 'mean stderr')
"""A Monte Carlo mean and its standard error."""

AdversarialTerm = namedtuple(
    'AdversarialTerm', 'node graph base base_trace adv_trace mask',
)
"""The recorded AdD term, the base mask, both traces and the mask found."""

Proposition1Report = namedtuple(
    'Proposition1Report', 'fd_quarter el add_exact fd_quarter_stderr el_stderr',
)
"""``1/4 R_FD``, ``R_EL`` and the exact ``R_AdD``, with standard errors."""


def _estimate(values):
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        return Estimate(float(values.mean()), 0.0)
    return Estimate(float(values.mean()),
                    float(values.std(ddof=1) / np.sqrt(len(values))))


def _draw(p, size, samples, rng):
    return (rng.random((samples, size)) >= p).astype(np.float64)


def el_regularizer(model, batch, p, schedule, metric, samples, rng,
                   bits=None, scale=None):
    """Monte Carlo estimate of the expectation-linearization regularizer.

    Arguments:
      model (:py:class:`~.BaseModel`): The model.
      batch (:py:class:`~.SequenceBatch`): The inputs.
      p (:py:class:`float`): Drop probability of the sampled masks.
      schedule (:py:class:`~.LambdaSchedule`): The step weights.
      metric (:py:class:`str`): The distance metric.
      samples (:py:class:`int`): ``S``, the number of masks.
      rng (:py:class:`numpy.random.Generator`): The mask source.
      bits (:py:class:`numpy.ndarray`, optional): Use these ``[S, H]``
        masks instead of drawing.
      scale (:py:class:`float`, optional): Mask scaling (defaults to
        ``1 / (1 - p)``).

    Returns:
      :py:class:`Estimate`: The regularizer value.

    """
    if samples < 1:
        raise ValueError('need at least one sample: {!r}'.format(samples))
    if bits is None:
        bits = _draw(p, model.hidden_size, samples, rng)
    scale = keep_scale(p) if scale is None else scale
    reference = model.predict(batch.inputs)
    perturbed = model.predict(batch.inputs, bits, scale)
    return _estimate(weighted_distance(reference, perturbed, schedule, metric))


def fd_regularizer(model, batch, p, schedule, metric, samples, rng,
                   bits=None, scale=None):
    """Monte Carlo estimate of the fraternal dropout regularizer.

    Arguments are as for :py:func:`el_regularizer`, except that ``bits``
    is a pair of ``[S, H]`` mask stacks.

    """
    if samples < 1:
        raise ValueError('need at least one sample: {!r}'.format(samples))
    if bits is None:
        bits = (_draw(p, model.hidden_size, samples, rng),
                _draw(p, model.hidden_size, samples, rng))
    scale = keep_scale(p) if scale is None else scale
    first = model.predict(batch.inputs, bits[0], scale)
    second = model.predict(batch.inputs, bits[1], scale)
    return _estimate(weighted_distance(first, second, schedule, metric))


def add_regularizer(model, batch, config, schedule, metric, rng,
                    base_policy='expected', p=0.0, init='flip',
                    search='greedy', input_p=0.0, graph=None, weights=None):
    """Record the adversarial dropout regularizer on a tape.

    The mask search is not differentiated through: the adversarial mask
    is found first, then both networks are recorded and only the
    adversarial one carries gradient.

    Arguments:
      model (:py:class:`~.BaseModel`): The model.
      batch (:py:class:`~.SequenceBatch`): The inputs.
      config (:py:class:`~.AdvConfig`): Budget and stage count.
      schedule (:py:class:`~.LambdaSchedule`): The step weights.
      metric (:py:class:`str`): The distance metric.
      rng (:py:class:`numpy.random.Generator`): Mask randomness.
      base_policy (:py:class:`str`, optional): ``'expected'`` or
        ``'sampled'``.
      p (:py:class:`float`, optional): Drop probability for a sampled
        base mask.
      init (:py:class:`str`, optional): Initial search mask policy.
      search (:py:class:`str`, optional): ``'greedy'`` or ``'exact'``.
      input_p (:py:class:`float`, optional): Input dropout probability;
        the two networks draw independent input masks.
      graph (:py:class:`~.TapeGraph`, optional): Tape to record onto.
      weights (:py:class:`dict`, optional): Parameter leaves on ``graph``.

    Returns:
      :py:class:`AdversarialTerm`: The regularizer node and its parts.

    """
    if search not in SEARCHES:
        raise ValueError('unknown search: {!r}'.format(search))
    size = model.hidden_size
    base = base_mask(base_policy, size, p, rng)
    base_input = adv_input = None
    if input_p > 0:
        base_input = sample_mask(input_p, model.input_size, rng)
        adv_input = sample_mask(input_p, model.input_size, rng)
    reference = model.predict(
        batch.inputs, base.bits, base.scale,
        input_mask=None if base_input is None else base_input.bits,
        input_scale=1.0 if base_input is None else base_input.scale,
    )
    if search == 'greedy':
        mask = adversarial_mask(model, batch, base, config, schedule, metric,
                                rng, init=init, reference=reference,
                                input_mask=adv_input)
    else:
        if adv_input is not None:
            raise ValueError('exact search does not support input dropout')
        mask, _ = brute_force_adversarial(model, batch, base, config.budget(size),
                                          schedule, metric, reference=reference)
    if graph is None:
        graph = TapeGraph()
    if weights is None:
        weights = model.bind(graph)
    base_trace = forward_sequence(model, batch, base, graph, weights,
                                  input_mask=base_input)
    adv_trace = forward_sequence(model, batch, mask, graph, weights,
                                 input_mask=adv_input)
    node = sequence_distance(base_trace, adv_trace, schedule, metric)
    return AdversarialTerm(node, graph, base, base_trace, adv_trace, mask)


class Remark1Report:
    """Both sides of the variance decomposition of the expected AdD term.

    With squared L2 distance, the mean distance between a random mask's
    prediction and its adversarial mask's prediction equals the sum of
    both variances, minus twice the covariance, plus the squared gap
    between the means (all summed over output classes).

    Arguments:
      lhs (:py:class:`float`): Monte Carlo mean distance.
      var_base (:py:class:`float`): Variance of the random predictions.
      var_adv (:py:class:`float`): Variance of the adversarial predictions.
      cov (:py:class:`float`): Their covariance.
      mean_gap_sq (:py:class:`float`): Squared gap between their means.
      stderr (:py:class:`dict`): Standard error per field, plus ``'rhs'``
        and ``'gap_influence'``, the first-order noise of the mean gap.

    """

    FIELDS = ('lhs', 'var_base', 'var_adv', 'cov', 'mean_gap_sq')

    def __init__(self, lhs, var_base, var_adv, cov, mean_gap_sq, stderr):
        self.lhs = lhs
        self.var_base = var_base
        self.var_adv = var_adv
        self.cov = cov
        self.mean_gap_sq = mean_gap_sq
        self.stderr = stderr

    def __repr__(self):
        return 'Remark1Report({})'.format(', '.join(
            '{}={!r}'.format(field, getattr(self, field)) for field in self.FIELDS
        ))

    @property
    def rhs(self):
        return self.var_base + self.var_adv - 2.0 * self.cov + self.mean_gap_sq

    @property
    def combined_stderr(self):
        return float(np.hypot(self.stderr['lhs'], self.stderr['rhs']))

    def consistent(self, sigmas=3.0):
        """Whether both sides agree within ``sigmas`` standard errors."""
        return abs(self.lhs - self.rhs) <= sigmas * self.combined_stderr + 1e-12


def _mask_seed(bits, seed):
    packed = int.from_bytes(np.packbits(bits.astype(bool)).tobytes(), 'little')
    return [seed, packed, len(bits)]


def greedy_adversary(model, batch, config, seed, init='flip'):
    """A deterministic map from a mask to its adversarial mask.

    The search randomness is seeded from the mask itself, so equal masks
    always map to equal adversarial masks.

    Returns:
      :py:class:`collections.abc.Callable`: ``mask -> mask``.

    """
    schedule = LambdaSchedule.final_step(batch.length)
    cache = {}

    def adversary(mask):
        key = mask.bits.tobytes()
        if key not in cache:
            rng = np.random.default_rng(_mask_seed(mask.bits, seed))
            cache[key] = adversarial_mask(model, batch, mask, config, schedule,
                                          'l2', rng, init=init)
        return cache[key]

    return adversary


def _centred_terms(first, second):
    """Per-sample contributions to each decomposition term."""
    first_dev = first - first.mean(axis=0)
    second_dev = second - second.mean(axis=0)
    gap = first.mean(axis=0) - second.mean(axis=0)
    rows = first.shape[1]
    return dict(
        var_base=(first_dev ** 2).sum(axis=(1, 2)) / rows,
        var_adv=(second_dev ** 2).sum(axis=(1, 2)) / rows,
        cov=(first_dev * second_dev).sum(axis=(1, 2)) / rows,
        mean_gap_sq=np.full(len(first), (gap ** 2).sum() / rows),
        gap_influence=(2.0 * gap * (first - second)).sum(axis=(1, 2)) / rows,
    )


def remark1_check(model, batch, p, samples, config, rng, adversary=None,
                  step=-1):
    """Estimate both sides of the variance decomposition at one step.

    Arguments:
      model (:py:class:`~.BaseModel`): The model.
      batch (:py:class:`~.SequenceBatch`): The inputs (rows averaged).
      p (:py:class:`float`): Drop probability of the random masks.
      samples (:py:class:`int`): ``N``, at least 30.
      config (:py:class:`~.AdvConfig`): The adversarial search budget.
      rng (:py:class:`numpy.random.Generator`): Mask randomness.
      adversary (:py:class:`collections.abc.Callable`, optional): Map
        from a mask to its adversarial mask (defaults to
        :py:func:`greedy_adversary`).
      step (:py:class:`int`, optional): The time index (default last).

    Returns:
      :py:class:`Remark1Report`: The estimates.

    """
    if samples < MIN_REMARK_SAMPLES:
        raise ValueError('need at least {} samples: {!r}'.format(
            MIN_REMARK_SAMPLES, samples,
        ))
    if adversary is None:
        adversary = greedy_adversary(model, batch, config,
                                     int(rng.integers(2 ** 32)))
    masks = [sample_mask(p, model.hidden_size, rng) for _ in range(samples)]
    adversarial = [adversary(mask) for mask in masks]
    scale = keep_scale(p)
    first = model.predict(batch.inputs, np.stack([m.bits for m in masks]), scale)[:, step]
    second = model.predict(batch.inputs, np.stack([m.bits for m in adversarial]),
                           scale)[:, step]
    rows = first.shape[1]
    distances = ((first - second) ** 2).sum(axis=(1, 2)) / rows
    terms = _centred_terms(first, second)
    rhs_terms = (terms['var_base'] + terms['var_adv'] - 2.0 * terms['cov']
                 + terms['gap_influence'])
    stderr = {name: _estimate(values).stderr for name, values in terms.items()}
    stderr['lhs'] = _estimate(distances).stderr
    stderr['rhs'] = _estimate(rhs_terms).stderr
    # The squared gap is a plug-in constant; its sampling noise is in gap_influence.
    stderr['mean_gap_sq'] = 0.0
    report = Remark1Report(
        lhs=float(distances.mean()),
        var_base=float(terms['var_base'].mean()),
        var_adv=float(terms['var_adv'].mean()),
        cov=float(terms['cov'].mean()),
        mean_gap_sq=float(terms['mean_gap_sq'][0]),
        stderr=stderr,
    )
    logger.debug('decomposition: lhs %.6g rhs %.6g (se %.3g)',
                 report.lhs, report.rhs, report.combined_stderr)
    return report


def proposition1_check(model, batch, p, delta, samples, rng, schedule=None,
                       metric='js'):
    """Estimate ``1/4 R_FD``, ``R_EL`` and the exact ``R_AdD``.

    Random masks are drawn from the constrained domain (at most the AdD
    budget of drops, unscaled) and the adversarial term is maximised
    exactly at the expected base mask.

    Raises:
      :py:class:`ValueError`: If the hidden size exceeds 12.

    """
    size = model.hidden_size
    if size > 12:
        raise ValueError('hidden size too large for exact search: {!r}'.format(size))
    if schedule is None:
        schedule = LambdaSchedule.final_step(batch.length)
    budget = AdvConfig(delta).budget(size)
    el = el_regularizer(model, batch, p, schedule, metric, samples, rng,
                        bits=sample_constrained(p, size, budget, samples, rng),
                        scale=1.0)
    pairs = (sample_constrained(p, size, budget, samples, rng),
             sample_constrained(p, size, budget, samples, rng))
    fd = fd_regularizer(model, batch, p, schedule, metric, samples, rng,
                        bits=pairs, scale=1.0)
    _, exact = brute_force_adversarial(model, batch, DropoutMask.expected(size),
                                       budget, schedule, metric)
    return Proposition1Report(
        fd_quarter=fd.mean / 4.0,
        el=el.mean,
        add_exact=exact,
        fd_quarter_stderr=fd.stderr / 4.0,
        el_stderr=el.stderr,
    )
