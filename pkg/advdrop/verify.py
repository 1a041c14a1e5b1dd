"""Property suites run on freshly sampled tiny models.

Each suite returns :py:class:`CheckResult` rows; a run passes only if
every row does.

"""
from collections import namedtuple
import logging

import numpy as np

from .core import finite_diff_check
from .distances import METRICS, LambdaSchedule, sequence_distance, weighted_distance
from .masks import (
    BASE_POLICIES,
    AdvConfig,
    DropoutMask,
    base_mask,
    brute_force_adversarial,
    flip,
    influence_map,
    iter_adversarial_masks,
    random_feasible_mask,
    reference_predictions,
    sample_mask,
)
from .models import Lstm, SequenceBatch, SimpleRnn, cross_entropy, forward_sequence
from .regularizers import proposition1_check, remark1_check

logger = logging.getLogger(__name__)

CheckResult = namedtuple('CheckResult', 'name passed value tolerance detail')
"""One verified property: the measured value against its tolerance."""

SearchTrial = namedtuple('SearchTrial', 'greedy random exact moved')
"""Distances reached by the greedy search, a random feasible mask and the
exact search, and whether the greedy search left its initial mask."""

GRAD_TOLERANCE = 1e-4
IM_TOLERANCE = 1e-3
SIGMAS = 3.0


def format_result(result):
    return '{} {}: {:.6g} (tolerance {:.6g}){}'.format(
        'PASS' if result.passed else 'FAIL',
        result.name,
        result.value,
        result.tolerance,
        ' ' + result.detail if result.detail else '',
    )


def random_model(rng, kind=None, input_size=None, hidden_size=None,
                 output_size=None, spread=1.0):
    """A model with uniform ``[-spread, spread]`` parameters."""
    cls = rng.choice([SimpleRnn, Lstm]) if kind is None else kind
    input_size = input_size or int(rng.integers(1, 4))
    hidden_size = hidden_size or int(rng.integers(2, 7))
    output_size = output_size or int(rng.integers(2, 5))
    template = cls.initialise(input_size, hidden_size, output_size, rng)
    return cls({name: rng.uniform(-spread, spread, value.shape)
                for name, value in template.params.items()})


def random_batch(rng, model, length=None, rows=None, kind='final'):
    """Inputs in ``[-2, 2]`` with random labels for ``model``."""
    length = length or int(rng.integers(1, 5))
    rows = rows or int(rng.integers(1, 4))
    inputs = rng.uniform(-2.0, 2.0, (length, rows, model.input_size))
    shape = (rows,) if kind == 'final' else (rows, length)
    return SequenceBatch(inputs, rng.integers(0, model.output_size, shape), kind)


def random_schedule(rng, length):
    weights = rng.uniform(0.0, 1.0, length)
    weights[rng.integers(length)] += 0.5
    return LambdaSchedule(weights)


def _fraction_check(name, flags, required, detail=''):
    fraction = float(np.mean(flags)) if len(flags) else 1.0
    return CheckResult(name, fraction >= required, fraction, required, detail)


def grad_suite(rng, count=100):
    """Tape gradients of unrolled losses against central differences.

    Each graph differentiates cross-entropy plus a detached-reference
    distance term with respect to one randomly chosen parameter.

    """
    worst = 0.0
    for _ in range(count):
        model = random_model(rng, hidden_size=int(rng.integers(2, 9)))
        batch = random_batch(rng, model, length=int(rng.integers(1, 9)),
                             kind=rng.choice(['final', 'per_step']))
        mask = sample_mask(0.3, model.hidden_size, rng)
        metric = rng.choice(METRICS)
        reference = model.predict(batch.inputs)
        schedule = random_schedule(rng, batch.length)
        name = rng.choice(list(model.params))

        def loss(graph, leaf, name=name, mask=mask, batch=batch, model=model,
                 metric=metric, reference=reference, schedule=schedule):
            weights = model.bind(graph)
            weights[name] = leaf
            trace = forward_sequence(model, batch, mask, graph, weights)
            distance = sequence_distance(reference, trace, schedule, metric)
            return graph.add(cross_entropy(trace, batch), distance)

        worst = max(worst, finite_diff_check(loss, model.params[name]))
    return [CheckResult('autodiff vs finite differences', worst <= GRAD_TOLERANCE,
                        worst, GRAD_TOLERANCE, 'max relative error over {} graphs'.format(count))]


def im_suite(rng, count=50, h=1e-5):
    """Influence maps against central differences of the weighted distance."""
    worst = {metric: 0.0 for metric in METRICS}
    for index in range(count):
        metric = METRICS[index % len(METRICS)]
        model = random_model(rng)
        batch = random_batch(rng, model)
        base = base_mask(rng.choice(BASE_POLICIES), model.hidden_size, 0.3, rng)
        search = base.flipped(int(rng.integers(model.hidden_size)))
        schedule = random_schedule(rng, batch.length)
        reference = reference_predictions(model, batch, base)
        scores = influence_map(model, batch, base, search, schedule, metric,
                               reference=reference).scores

        def objective(bits):
            predictions = model.predict(batch.inputs, bits, search.scale)
            return weighted_distance(reference, predictions, schedule, metric)

        for unit in range(model.hidden_size):
            step = np.zeros(model.hidden_size)
            step[unit] = h
            numeric = (objective(search.bits + step) - objective(search.bits - step)) / (2 * h)
            error = abs(scores[unit] - numeric) / max(1.0, abs(numeric))
            worst[metric] = max(worst[metric], error)
    return [CheckResult('influence map ({})'.format(metric), value <= IM_TOLERANCE,
                        value, IM_TOLERANCE, 'max relative error')
            for metric, value in worst.items()]


def remark1_suite(rng, count=20, samples=2000):
    """The variance decomposition of the expected AdD term."""
    results = []
    for index in range(count):
        model = random_model(rng, hidden_size=int(rng.integers(3, 7)), spread=2.0)
        batch = random_batch(rng, model, length=int(rng.integers(2, 5)))
        report = remark1_check(model, batch, 0.3, samples, AdvConfig(0.34, 2), rng)
        tolerance = SIGMAS * report.combined_stderr
        results.append(CheckResult(
            'decomposition model {}'.format(index),
            report.consistent(SIGMAS),
            abs(report.lhs - report.rhs),
            tolerance,
            'lhs {:.6g} rhs {:.6g}'.format(report.lhs, report.rhs),
        ))
    return results


def prop1_suite(rng, count=100, samples=2000):
    """Ordering of the FD, EL and exact AdD regularizers."""
    upper, lower, triples = [], [], []
    for index in range(count):
        model = random_model(rng, hidden_size=int(rng.integers(3, 9)), spread=2.0)
        batch = random_batch(rng, model, length=int(rng.integers(2, 5)))
        report = proposition1_check(model, batch, 0.2, 0.3, samples, rng,
                                    metric=METRICS[index % len(METRICS)])
        upper.append(report.el <= report.add_exact + SIGMAS * report.el_stderr + 1e-12)
        lower.append(report.fd_quarter <= report.el + SIGMAS * np.hypot(
            report.fd_quarter_stderr, report.el_stderr,
        ))
        triples.append((report.fd_quarter, report.el, report.add_exact))
        logger.debug('model %d: fd/4 %.6g el %.6g add %.6g', index, *triples[-1])
    detail = 'mean (fd/4, el, add) = ({:.6g}, {:.6g}, {:.6g})'.format(
        *np.mean(triples, axis=0))
    return [
        _fraction_check('el <= exact add', upper, 1.0, detail),
        _fraction_check('fd/4 <= el', lower, 0.95, detail),
    ]


def _search_instance(rng, max_hidden):
    model = random_model(rng, hidden_size=int(rng.integers(2, max_hidden + 1)), spread=2.0)
    batch = random_batch(rng, model)
    return model, batch, random_schedule(rng, batch.length), rng.choice(METRICS)


def search_trial(rng, config, sizes=(6, 10), exact=True):
    """Run the greedy search on one random instance with the expected base.

    The greedy mask is compared with a random mask flipping the full
    budget and, when ``exact``, with the exhaustive maximiser.

    Arguments:
      rng (:py:class:`numpy.random.Generator`): Instance and search
        randomness.
      config (:py:class:`~.AdvConfig`): The search budget and stages.
      sizes (:py:class:`tuple`, optional): Inclusive hidden size range.
      exact (:py:class:`bool`, optional): Whether to run the exhaustive
        search (``exact`` is ``None`` otherwise).

    Returns:
      :py:class:`SearchTrial`: The distances reached.

    """
    size = int(rng.integers(sizes[0], sizes[1] + 1))
    model = random_model(rng, hidden_size=size, spread=2.0)
    batch = random_batch(rng, model)
    metric = rng.choice(METRICS)
    schedule = LambdaSchedule.final_step(batch.length)
    base = DropoutMask.expected(size)
    reference = reference_predictions(model, batch, base)
    masks = list(iter_adversarial_masks(model, batch, base, config, schedule,
                                        metric, rng, reference=reference))
    budget = config.budget(size)
    candidates = np.stack([masks[-1].bits, random_feasible_mask(base, budget, rng).bits])
    greedy, random = weighted_distance(
        reference, model.predict(batch.inputs, candidates), schedule, metric,
    )
    best = None
    if exact:
        _, best = brute_force_adversarial(model, batch, base, budget, schedule,
                                          metric, reference=reference)
    return SearchTrial(float(greedy), float(random), best, masks[-1] != masks[0])


def flip_suite(rng, count=1000, ratio_trials=200):
    """Budget, monotonicity, sign rule and oracle dominance of the search."""
    budget_ok, monotone, signs, dominance = [], [], [], []
    for _ in range(count):
        model, batch, schedule, metric = _search_instance(rng, 10)
        size = model.hidden_size
        config = AdvConfig(rng.uniform(0.05, 0.6), int(rng.integers(1, 4)))
        base = base_mask(rng.choice(BASE_POLICIES), size, 0.3, rng)
        reference = reference_predictions(model, batch, base)
        masks = list(iter_adversarial_masks(model, batch, base, config, schedule,
                                            metric, rng, reference=reference))
        budget = config.budget(size)
        distances = [mask.hamming(base) for mask in masks]
        budget_ok.append(max(distances) <= budget)
        monotone.append(all(a <= b for a, b in zip(distances, distances[1:])))
        influence = influence_map(model, batch, base, masks[0], schedule, metric,
                                  reference=reference)
        changed = np.flatnonzero(flip(masks[0], influence, base, budget).bits
                                 != masks[0].bits)
        signs.append(bool((influence.flip_scores()[changed] > 0).all()))
        _, best = brute_force_adversarial(model, batch, base, budget, schedule,
                                          metric, reference=reference)
        final = masks[-1]
        greedy = weighted_distance(
            reference, model.predict(batch.inputs, final.bits, final.scale),
            schedule, metric,
        )
        dominance.append(best >= greedy - 1e-12)
    ratios = []
    for _ in range(ratio_trials):
        trial = search_trial(rng, AdvConfig(0.4, 2))
        ratios.append(trial.exact <= 0 or trial.greedy >= 0.7 * trial.exact)
    return [
        _fraction_check('budget invariant', budget_ok, 1.0),
        _fraction_check('monotone stages', monotone, 1.0),
        _fraction_check('sign rule', signs, 1.0),
        _fraction_check('oracle dominance', dominance, 1.0),
        _fraction_check('greedy within 70% of exact', ratios, 0.9,
                        'over {} trials'.format(ratio_trials)),
    ]


SUITES = {
    'grad': grad_suite,
    'im': im_suite,
    'remark1': remark1_suite,
    'prop1': prop1_suite,
    'flip-oracle': flip_suite,
}
""":py:class:`dict`: Suite name to function taking a generator."""


def run_suite(name, seed=0, **sizes):
    """Run the suite ``name`` with a generator seeded from ``seed``.

    Arguments:
      name (:py:class:`str`): A key of :py:data:`SUITES`.
      seed (:py:class:`int`, optional): The root seed.
      **sizes: Overrides of the suite's instance counts.

    Returns:
      :py:class:`list`: The :py:class:`CheckResult` rows.

    """
    try:
        suite = SUITES[name]
    except KeyError:
        raise ValueError('unknown suite: {!r}'.format(name))
    results = suite(np.random.default_rng(seed), **sizes)
    for result in results:
        logger.info(format_result(result))
    return results
