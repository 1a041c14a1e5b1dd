"""Distances between output distributions and their time weighting."""
import logging

import numpy as np
from scipy.special import rel_entr

logger = logging.getLogger(__name__)

METRICS = ('l2', 'js')
""":py:class:`tuple`: Squared L2 and Jensen-Shannon (natural log)."""


def _check_metric(metric):
    if metric not in METRICS:
        raise ValueError('unknown distance metric: {!r}'.format(metric))


def distance(p, q, metric):
    """Distance between ``p`` and ``q`` along the last axis.

    Arguments:
      p (:py:class:`numpy.ndarray`): Vectors (or stacked rows).
      q (:py:class:`numpy.ndarray`): Same shape as ``p``.
      metric (:py:class:`str`): One of :py:data:`METRICS`.

    Returns:
      :py:class:`numpy.ndarray`: One value per row (a 0-d array for
      plain vectors).

    """
    _check_metric(metric)
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError('shape mismatch: {!r} vs {!r}'.format(p.shape, q.shape))
    if metric == 'l2':
        return ((p - q) ** 2).sum(axis=-1)
    if (p < 0).any() or (q < 0).any():
        raise ValueError('negative entries under jensen-shannon distance')
    m = 0.5 * (p + q)
    return 0.5 * (rel_entr(p, m).sum(axis=-1) + rel_entr(q, m).sum(axis=-1))


class LambdaSchedule:
    """Non-negative per-step weights ``lambda_1..lambda_T``.

    Arguments:
      weights (:py:class:`collections.abc.Sequence`): The weights.

    """

    NAMES = ('last', 'uniform')

    def __init__(self, weights):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 1 or (weights < 0).any() or not (weights > 0).any():
            raise ValueError('weights must be non-negative with one positive: {!r}'.format(
                weights.tolist(),
            ))
        self.weights = weights

    def __len__(self):
        return len(self.weights)

    def __eq__(self, other):
        return (isinstance(other, LambdaSchedule)
                and np.array_equal(self.weights, other.weights))

    def __repr__(self):
        return 'LambdaSchedule({!r})'.format(self.weights.tolist())

    @classmethod
    def final_step(cls, length):
        weights = np.zeros(length)
        weights[-1] = 1.0
        return cls(weights)

    @classmethod
    def uniform(cls, length):
        return cls(np.full(length, 1.0 / length))

    @classmethod
    def named(cls, name, length):
        """Build a preset schedule (``'last'`` or ``'uniform'``)."""
        if name == 'last':
            return cls.final_step(length)
        if name == 'uniform':
            return cls.uniform(length)
        raise ValueError('unknown lambda schedule: {!r}'.format(name))


def _check_length(schedule, length):
    if len(schedule) != length:
        raise ValueError('schedule length {} does not match sequence length {}'.format(
            len(schedule), length,
        ))


def weighted_distance(reference, predictions, schedule, metric):
    """``sum_t lambda_t * mean_b D[reference_t || predictions_t]``.

    Arguments:
      reference (:py:class:`numpy.ndarray`): ``[T, B, M]``.
      predictions (:py:class:`numpy.ndarray`): ``[T, B, M]`` or a stack
        ``[S, T, B, M]``.
      schedule (:py:class:`LambdaSchedule`): The step weights.
      metric (:py:class:`str`): One of :py:data:`METRICS`.

    Returns:
      :py:class:`float` or :py:class:`numpy.ndarray`: One value per
      stacked prediction.

    """
    _check_length(schedule, predictions.shape[-3])
    reference = np.broadcast_to(reference, predictions.shape)
    per_step = distance(reference, predictions, metric).mean(axis=-1)
    return per_step @ schedule.weights


def graph_distance(graph, reference, prediction, metric):
    """Batch-mean distance between two ``[B, M]`` nodes on ``graph``.

    Returns:
      :py:class:`int`: A scalar node.

    """
    _check_metric(metric)
    rows = graph.value(prediction).shape[0]
    if metric == 'l2':
        total = graph.sum(graph.square(graph.sub(prediction, reference)))
        return graph.scale(total, 1.0 / rows)
    mixture = graph.scale(graph.add(reference, prediction), 0.5)
    log_mixture = graph.log(mixture)

    def divergence(node):
        return graph.sum(graph.mul(node, graph.sub(graph.log(node), log_mixture)))

    total = graph.add(divergence(reference), divergence(prediction))
    return graph.scale(total, 0.5 / rows)


def sequence_distance(reference, trace, schedule, metric, detach=True):
    """Record ``sum_t lambda_t D[reference_t || trace_t]`` on ``trace.graph``.

    Arguments:
      reference: A :py:class:`~.ForwardTrace` or a ``[T, B, M]`` array
        of reference predictions.
      trace (:py:class:`~.ForwardTrace`): The perturbed pass.
      schedule (:py:class:`LambdaSchedule`): The step weights.
      metric (:py:class:`str`): One of :py:data:`METRICS`.
      detach (:py:class:`bool`, optional): Whether the reference is a
        constant (no gradient flows through it). Only traces on the
        same graph may be attached.

    Returns:
      :py:class:`int`: The scalar node.

    """
    graph = trace.graph
    _check_length(schedule, len(trace))
    attached = not detach and not isinstance(reference, np.ndarray)
    if attached and reference.graph is not graph:
        raise ValueError('attached traces must share one graph')
    total = None
    for step, weight in enumerate(schedule.weights):
        if weight == 0:
            continue
        if attached:
            ref = reference.predictions[step]
        elif isinstance(reference, np.ndarray):
            ref = graph.leaf(reference[step])
        else:
            ref = graph.leaf(reference.graph.value(reference.predictions[step]))
        term = graph.scale(
            graph_distance(graph, ref, trace.predictions[step], metric), weight,
        )
        total = term if total is None else graph.add(total, term)
    return total
