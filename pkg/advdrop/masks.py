"""Dropout masks and the influence-guided adversarial mask search.

The search relaxes the binary mask to a real vector, takes the gradient of
the weighted output distance with respect to it (the influence map), then
greedily flips the elements whose flips are predicted to increase the
distance most, under a budget on how many elements may differ from the
base mask.

"""
from itertools import combinations
import logging
import math

import numpy as np

from .distances import sequence_distance, weighted_distance
from .models import forward_sequence, keep_scale

logger = logging.getLogger(__name__)

SCALING_MODES = ('inverted', 'none')

BASE_POLICIES = ('expected', 'sampled')
""":py:class:`tuple`: How the base mask of the search is chosen."""

INIT_POLICIES = ('flip', 'copy')
""":py:class:`tuple`: How the search mask is initialised from the base."""

MAX_EXHAUSTIVE_SIZE = 16


class DropoutMask:
    """A binary keep/drop vector shared by every step of a sequence.

    Arguments:
      bits (:py:class:`collections.abc.Sequence`): Values in ``{0, 1}``.
      p (:py:class:`float`, optional): Drop probability used for scaling.
      scaling (:py:class:`str`, optional): ``'inverted'`` divides kept
        units by ``1 - p``; ``'none'`` requires ``p == 0``.

    """

    def __init__(self, bits, p=0.0, scaling='inverted'):
        bits = np.array(bits, dtype=np.float64)
        if bits.ndim != 1 or not np.isin(bits, (0.0, 1.0)).all():
            raise ValueError('mask bits must be a vector of 0/1: {!r}'.format(bits))
        if scaling not in SCALING_MODES:
            raise ValueError('unknown scaling mode: {!r}'.format(scaling))
        if scaling == 'none' and p != 0:
            raise ValueError('unscaled masks must have p == 0: {!r}'.format(p))
        keep_scale(p)
        self.bits = bits
        self.p = float(p)
        self.scaling = scaling

    def __len__(self):
        return len(self.bits)

    def __eq__(self, other):
        return (isinstance(other, DropoutMask)
                and np.array_equal(self.bits, other.bits)
                and self.p == other.p
                and self.scaling == other.scaling)

    def __repr__(self):
        return 'DropoutMask(bits={!r}, p={!r}, scaling={!r})'.format(
            self.bits.astype(int).tolist(), self.p, self.scaling,
        )

    @classmethod
    def expected(cls, size):
        """The expected mask: all ones, no scaling (the full network)."""
        return cls(np.ones(size), p=0.0, scaling='none')

    @property
    def effective_p(self):
        return self.p if self.scaling == 'inverted' else 0.0

    @property
    def scale(self):
        return keep_scale(self.effective_p)

    def hamming(self, other):
        return int(np.count_nonzero(self.bits != other.bits))

    def with_bits(self, bits):
        """A mask with the same scaling and new ``bits``."""
        return DropoutMask(bits, self.p, self.scaling)

    def flipped(self, *indices):
        bits = self.bits.copy()
        bits[list(indices)] = 1.0 - bits[list(indices)]
        return self.with_bits(bits)


class AdvConfig:
    """Budget and stage count of the adversarial search.

    Arguments:
      delta (:py:class:`float`): Fraction of units that may differ from
        the base mask, in ``(0, 1)``.
      k (:py:class:`int`, optional): Number of search stages.

    """

    def __init__(self, delta, k=1):
        if not 0.0 < delta < 1.0:
            raise ValueError('delta must be in (0, 1): {!r}'.format(delta))
        if int(k) != k or k < 1:
            raise ValueError('k must be a positive integer: {!r}'.format(k))
        self.delta = float(delta)
        self.k = int(k)

    def __repr__(self):
        return 'AdvConfig(delta={!r}, k={!r})'.format(self.delta, self.k)

    def budget(self, size):
        """``max(1, floor(delta * size))`` flipped elements."""
        return max(1, math.floor(self.delta * size + 1e-9))

    def stage_budget(self, stage, size):
        """The budget of stage ``stage`` (zero-based) out of ``k``."""
        fraction = (stage + 1) * self.delta * size / self.k
        return min(max(1, math.floor(fraction + 1e-9)), self.budget(size))

    def stalls(self, size, init='flip'):
        """Whether the initial random flip already spends the whole budget.

        The search then returns its initial mask unchanged, so the
        adversarial mask is a uniformly random single-unit drop.

        """
        if init == 'flip' and self.budget(size) <= 1:
            logger.warning('budget %d at hidden size %d is spent by the initial flip; '
                           'the search cannot move (delta %.3g)',
                           self.budget(size), size, self.delta)
            return True
        return False


class InfluenceMap:
    """Gradient of the weighted distance with respect to a relaxed mask.

    Arguments:
      scores (:py:class:`numpy.ndarray`): One value per hidden unit.
      mask (:py:class:`DropoutMask`): Where the gradient was taken.

    """

    def __init__(self, scores, mask):
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != mask.bits.shape or not np.isfinite(scores).all():
            raise ValueError('influence scores must be finite, one per unit')
        self.scores = scores
        self.mask = mask

    def __repr__(self):
        return 'InfluenceMap(scores={!r})'.format(self.scores.tolist())

    def flip_scores(self):
        """``(1 - 2 * mask) * scores``: the predicted gain of each flip."""
        return (1.0 - 2.0 * self.mask.bits) * self.scores


def sample_mask(p, size, rng):
    """Draw i.i.d. bits with ``P(bit = 1) = 1 - p``, inverted scaling."""
    keep_scale(p)
    return DropoutMask(rng.random(size) >= p, p=p, scaling='inverted')


def base_mask(policy, size, p, rng):
    """The base mask for ``policy`` (one of :py:data:`BASE_POLICIES`)."""
    if policy == 'expected':
        return DropoutMask.expected(size)
    if policy == 'sampled':
        return sample_mask(p, size, rng)
    raise ValueError('unknown base mask policy: {!r}'.format(policy))


def init_search_mask(base, rng, policy='flip'):
    """The initial search mask: ``base`` with one random flip, or a copy.

    A copy only yields a useful influence map when another noise source
    (input dropout) separates the two networks.

    """
    if policy == 'flip':
        return base.flipped(int(rng.integers(len(base))))
    if policy == 'copy':
        return base.with_bits(base.bits)
    raise ValueError('unknown initial mask policy: {!r}'.format(policy))


def random_feasible_mask(base, budget, rng):
    """``base`` with ``budget`` distinct random elements flipped."""
    count = min(budget, len(base))
    return base.flipped(*rng.choice(len(base), size=count, replace=False).tolist())


def sample_constrained(p, size, budget, samples, rng):
    """Rejection-sample Bernoulli masks with at most ``budget`` drops.

    Returns:
      :py:class:`numpy.ndarray`: ``[samples, size]`` bits.

    """
    keep_scale(p)
    accepted = []
    count = 0
    while count < samples:
        draws = rng.random((max(samples, 64), size)) >= p
        draws = draws[(~draws).sum(axis=1) <= budget]
        accepted.append(draws)
        count += len(draws)
    return np.concatenate(accepted)[:samples].astype(np.float64)


def reference_predictions(model, batch, base):
    """Predictions ``[T, B, M]`` of the network masked by ``base``."""
    return model.predict(batch.inputs, base.bits, base.scale)


def influence_map(model, batch, base, search, schedule, metric,
                  reference=None, input_mask=None):
    """Influence of each recurrent unit on the weighted output distance.

    One backward pass through the unrolled graph, with the mask as a
    continuous leaf evaluated at ``search``, gives every unit's score.
    The reference predictions are constants.

    Arguments:
      model (:py:class:`~.BaseModel`): The model.
      batch (:py:class:`~.SequenceBatch`): The inputs.
      base (:py:class:`DropoutMask`): The base mask.
      search (:py:class:`DropoutMask`): Where to evaluate the gradient.
      schedule (:py:class:`~.LambdaSchedule`): The step weights.
      metric (:py:class:`str`): The distance metric.
      reference (:py:class:`numpy.ndarray`, optional): Reference
        predictions (defaults to the ``base`` network).
      input_mask (:py:class:`DropoutMask`, optional): Input noise for the
        perturbed network.

    Returns:
      :py:class:`InfluenceMap`: The scores.

    """
    if search == base and input_mask is None:
        logger.warning(
            'search mask equals base mask with no other noise source; '
            'influence map is identically zero (hidden size %d)', len(base),
        )
        return InfluenceMap(np.zeros(len(base)), search)
    if reference is None:
        reference = reference_predictions(model, batch, base)
    trace = forward_sequence(model, batch, search, input_mask=input_mask)
    root = sequence_distance(reference, trace, schedule, metric)
    trace.graph.backward(root)
    return InfluenceMap(trace.graph.grad(trace.mask).copy(), search)


def flip(search, influence, base, budget):
    """Greedily flip elements of ``search`` in order of predicted gain.

    Indices are visited by descending flip score (ties by lower index).
    Visiting stops at the first non-positive score or when a flip would
    take more than ``budget`` elements away from ``base``. Elements that
    already differ from ``base`` stay as they are, so the distance to
    ``base`` never shrinks.

    Returns:
      :py:class:`DropoutMask`: The flipped mask.

    """
    if budget < 0:
        raise ValueError('budget must be non-negative: {!r}'.format(budget))
    scores = influence.flip_scores()
    bits = search.bits.copy()
    differing = int(np.count_nonzero(bits != base.bits))
    for index in np.argsort(-scores, kind='stable'):
        if scores[index] <= 0 or differing >= budget:
            break
        if bits[index] != base.bits[index]:
            continue
        bits[index] = 1.0 - bits[index]
        differing += 1
    return search.with_bits(bits)


def iter_adversarial_masks(model, batch, base, config, schedule, metric, rng,
                           init='flip', reference=None, input_mask=None):
    """Yield the search masks ``eps_adv^(0)`` through ``eps_adv^(K)``.

    Each stage recomputes the influence map at the current mask and flips
    with budget ``max(1, floor((k + 1) / K * delta * H))``.

    """
    if reference is None:
        reference = reference_predictions(model, batch, base)
    current = init_search_mask(base, rng, init)
    yield current
    for stage in range(config.k):
        influence = influence_map(model, batch, base, current, schedule, metric,
                                  reference=reference, input_mask=input_mask)
        budget = config.stage_budget(stage, len(base))
        current = flip(current, influence, base, budget)
        logger.debug('search stage %d: budget %d, hamming %d',
                     stage, budget, current.hamming(base))
        yield current


def adversarial_mask(model, batch, base, config, schedule, metric, rng,
                     init='flip', reference=None, input_mask=None):
    """The final mask of :py:func:`iter_adversarial_masks`."""
    for mask in iter_adversarial_masks(model, batch, base, config, schedule,
                                       metric, rng, init=init,
                                       reference=reference,
                                       input_mask=input_mask):
        pass
    return mask  # pylint: disable=undefined-loop-variable


def _subsets(size, budget):
    for count in range(min(budget, size) + 1):
        yield from combinations(range(size), count)


def brute_force_adversarial(model, batch, base, budget, schedule, metric,
                            reference=None, chunk=4096):
    """Exact maximiser of the weighted distance within ``budget`` flips.

    Every mask within Hamming distance ``budget`` of ``base`` is scored;
    ties go to the first mask enumerated (fewest flips, lowest indices).

    Returns:
      :py:class:`tuple`: The ``(mask, distance)`` pair.

    Raises:
      :py:class:`ValueError`: If the hidden size exceeds
        :py:data:`MAX_EXHAUSTIVE_SIZE`.

    """
    size = len(base)
    if size > MAX_EXHAUSTIVE_SIZE:
        raise ValueError('hidden size too large for exhaustive search: {!r}'.format(size))
    if reference is None:
        reference = reference_predictions(model, batch, base)
    best_bits, best = base.bits, -np.inf
    subsets = list(_subsets(size, budget))
    for start in range(0, len(subsets), chunk):
        stack = np.tile(base.bits, (len(subsets[start:start + chunk]), 1))
        for row, subset in enumerate(subsets[start:start + chunk]):
            stack[row, list(subset)] = 1.0 - stack[row, list(subset)]
        scores = weighted_distance(
            reference,
            model.predict(batch.inputs, stack, base.scale),
            schedule,
            metric,
        )
        winner = int(np.argmax(scores))
        if scores[winner] > best:
            best_bits, best = stack[winner], float(scores[winner])
    return base.with_bits(best_bits), best
