import logging

import numpy as np
import pytest
from scipy import stats

from advdrop.distances import LambdaSchedule, weighted_distance
from advdrop.masks import (
    MAX_EXHAUSTIVE_SIZE,
    AdvConfig,
    DropoutMask,
    InfluenceMap,
    adversarial_mask,
    base_mask,
    brute_force_adversarial,
    flip,
    influence_map,
    init_search_mask,
    iter_adversarial_masks,
    random_feasible_mask,
    reference_predictions,
    sample_constrained,
    sample_mask,
)
from advdrop.models import Lstm, SimpleRnn
from advdrop.verify import random_batch, random_model

from tests.helpers import silent_model, tiny_batch


def test_mask_validation():
    with pytest.raises(ValueError):
        DropoutMask([0, 2, 1])
    with pytest.raises(ValueError):
        DropoutMask([[1, 0]])
    with pytest.raises(ValueError):
        DropoutMask([1, 0], p=0.5, scaling='none')
    with pytest.raises(ValueError):
        DropoutMask([1, 0], scaling='halved')
    with pytest.raises(ValueError):
        DropoutMask([1, 0], p=1.0)


def test_expected_mask():
    mask = DropoutMask.expected(3)
    assert mask.bits.tolist() == [1.0, 1.0, 1.0]
    assert mask.scale == 1.0
    assert mask.scaling == 'none'


def test_mask_helpers():
    mask = DropoutMask([1, 1, 0, 1], p=0.5)
    assert mask.scale == 2.0
    assert mask.flipped(0, 2).bits.tolist() == [0, 1, 1, 1]
    assert mask.flipped(0).hamming(mask) == 1
    assert mask.with_bits([0, 0, 0, 0]).p == 0.5


def test_sample_mask_p_zero(rng):
    for _ in range(20):
        assert sample_mask(0.0, 10, rng).bits.all()


def test_sample_mask_rejects(rng):
    with pytest.raises(ValueError):
        sample_mask(1.0, 4, rng)
    with pytest.raises(ValueError):
        sample_mask(-0.5, 4, rng)


def test_sample_mask_near_one(rng):
    assert sample_mask(0.999, 1000, rng).bits.sum() < 20


def test_sample_mask_frequency(rng):
    draws = 10 ** 6
    zeros = draws - int(sample_mask(0.1, draws, rng).bits.sum())
    low, high = stats.binom.interval(0.999, draws, 0.1)
    assert low <= zeros <= high
    assert abs(zeros / draws - 0.1) <= 0.001


def test_init_search_mask(rng):
    base = DropoutMask.expected(6)
    assert init_search_mask(base, rng).hamming(base) == 1
    assert init_search_mask(base, rng, 'copy') == base
    with pytest.raises(ValueError):
        init_search_mask(base, rng, 'swap')


def test_init_search_mask_uniform(rng):
    base = DropoutMask.expected(8)
    counts = np.zeros(8)
    for _ in range(10 ** 4):
        counts[np.argmin(init_search_mask(base, rng).bits)] += 1
    assert stats.chisquare(counts).pvalue > 0.01


def test_base_mask(rng):
    assert base_mask('expected', 4, 0.3, rng) == DropoutMask.expected(4)
    sampled = base_mask('sampled', 4, 0.3, rng)
    assert sampled.scaling == 'inverted' and sampled.p == 0.3
    with pytest.raises(ValueError):
        base_mask('random', 4, 0.3, rng)


def test_budget():
    assert AdvConfig(0.03).budget(100) == 3
    assert AdvConfig(0.03).budget(32) == 1
    assert AdvConfig(0.5).budget(5) == 2


def test_stage_budget():
    config = AdvConfig(0.5, 2)
    assert [config.stage_budget(stage, 10) for stage in range(2)] == [2, 5]
    assert AdvConfig(0.03, 3).stage_budget(0, 100) == 1


def test_stalls(caplog):
    with caplog.at_level(logging.WARNING, logger='advdrop.masks'):
        assert AdvConfig(0.05, 2).stalls(32)
    assert 'cannot move' in caplog.text
    assert not AdvConfig(0.1, 2).stalls(32)
    assert not AdvConfig(0.05, 2).stalls(32, init='copy')


def _searches(model, config, rng, count):
    base = DropoutMask.expected(model.hidden_size)
    for _ in range(count):
        batch = random_batch(rng, model)
        yield base, list(iter_adversarial_masks(model, batch, base, config,
                                                LambdaSchedule.final_step(batch.length),
                                                'js', rng))


def test_search_cannot_move_at_budget_one(rng):
    model = Lstm.initialise(1, 32, 10, rng)
    for base, masks in _searches(model, AdvConfig(0.05, 2), rng, 10):
        assert masks[-1] == masks[0]
        assert masks[-1].hamming(base) == 1


def test_search_moves_at_budget_three(rng):
    model = Lstm.initialise(1, 32, 10, rng)
    moved = []
    for base, masks in _searches(model, AdvConfig(0.1, 2), rng, 20):
        assert masks[-1].hamming(base) <= 3
        moved.append(masks[-1] != masks[0])
    assert any(moved)


@pytest.mark.parametrize('delta, k', [(0.0, 1), (1.0, 1), (0.1, 0), (0.1, 1.5)])
def test_adv_config_rejects(delta, k):
    with pytest.raises(ValueError):
        AdvConfig(delta, k)


def test_influence_map_rejects_non_finite():
    with pytest.raises(ValueError):
        InfluenceMap([0.0, np.nan], DropoutMask.expected(2))
    with pytest.raises(ValueError):
        InfluenceMap([0.0], DropoutMask.expected(2))


def _influence(scores):
    return InfluenceMap(scores, DropoutMask.expected(len(scores)))


def test_flip_budget_one():
    base = DropoutMask.expected(4)
    influence = _influence([0.5, -0.2, 0.1, -0.4])
    assert influence.flip_scores().tolist() == [-0.5, 0.2, -0.1, 0.4]
    assert flip(base, influence, base, 1).bits.tolist() == [1, 1, 1, 0]


def test_flip_budget_two():
    base = DropoutMask.expected(4)
    influence = _influence([0.5, -0.2, 0.1, -0.4])
    assert flip(base, influence, base, 2).bits.tolist() == [1, 0, 1, 0]
    assert flip(base, influence, base, 4).bits.tolist() == [1, 0, 1, 0]


def test_flip_budget_zero():
    base = DropoutMask.expected(4)
    assert flip(base, _influence([-1.0, -1.0, -1.0, -1.0]), base, 0) == base


def test_flip_ties_go_to_lower_index():
    base = DropoutMask.expected(4)
    influence = _influence([0.0, -0.3, 0.0, -0.3])
    assert flip(base, influence, base, 1).bits.tolist() == [1, 0, 1, 1]


def test_flip_keeps_existing_differences():
    base = DropoutMask.expected(4)
    search = base.flipped(0)
    influence = InfluenceMap([1.0, -0.3, 0.2, -0.1], search)
    # unit 0 already differs; its score (+1 for restoring it) is skipped
    assert flip(search, influence, base, 2).bits.tolist() == [0, 0, 1, 1]
    assert flip(search, influence, base, 1) == search


def test_flip_rejects_negative_budget():
    base = DropoutMask.expected(2)
    with pytest.raises(ValueError):
        flip(base, _influence([1.0, 1.0]), base, -1)


def test_influence_map_degenerate(caplog, model, batch):
    base = DropoutMask.expected(4)
    schedule = LambdaSchedule.final_step(3)
    with caplog.at_level(logging.WARNING, logger='advdrop.masks'):
        influence = influence_map(model, batch, base, base, schedule, 'js')
    assert not influence.scores.any()
    assert 'identically zero' in caplog.text


def test_influence_map_unreachable_unit(rng):
    model = SimpleRnn.initialise(2, 4, 3, rng)
    model.params['U_h'][2] = 0.0
    model.params['W_out'][2] = 0.0
    batch = tiny_batch(rng, model)
    base = DropoutMask.expected(4)
    influence = influence_map(model, batch, base, base.flipped(0),
                              LambdaSchedule.uniform(3), 'l2')
    assert influence.scores[2] == 0.0
    assert influence.scores.any()


@pytest.mark.parametrize('metric', ['l2', 'js'])
def test_influence_map_finite_differences(metric, rng):
    h = 1e-4
    for _ in range(5):
        model = random_model(rng, spread=1.5)
        batch = random_batch(rng, model)
        base = DropoutMask.expected(model.hidden_size)
        search = base.flipped(int(rng.integers(model.hidden_size)))
        schedule = LambdaSchedule.uniform(batch.length)
        reference = reference_predictions(model, batch, base)
        scores = influence_map(model, batch, base, search, schedule, metric).scores
        for unit in range(model.hidden_size):
            step = np.zeros(model.hidden_size)
            step[unit] = h
            upper = weighted_distance(reference, model.predict(batch.inputs, search.bits + step),
                                      schedule, metric)
            lower = weighted_distance(reference, model.predict(batch.inputs, search.bits - step),
                                      schedule, metric)
            numeric = (upper - lower) / (2 * h)
            assert abs(scores[unit] - numeric) <= 1e-3 * max(1.0, abs(numeric))


def test_single_stage_is_one_flip(model, batch, rng):
    base = DropoutMask.expected(4)
    schedule = LambdaSchedule.final_step(3)
    config = AdvConfig(0.5, 1)
    seed = 99
    result = adversarial_mask(model, batch, base, config, schedule, 'js',
                              np.random.default_rng(seed))
    start = init_search_mask(base, np.random.default_rng(seed))
    influence = influence_map(model, batch, base, start, schedule, 'js')
    assert result == flip(start, influence, base, config.budget(4))


def test_search_respects_budget(rng):
    for _ in range(200):
        model = random_model(rng, hidden_size=int(rng.integers(2, 12)), spread=2.0)
        batch = random_batch(rng, model)
        config = AdvConfig(rng.uniform(0.05, 0.6), int(rng.integers(1, 4)))
        base = base_mask(rng.choice(['expected', 'sampled']), model.hidden_size, 0.3, rng)
        masks = list(iter_adversarial_masks(model, batch, base, config,
                                            LambdaSchedule.final_step(batch.length),
                                            'js', rng))
        assert len(masks) == config.k + 1
        distances = [mask.hamming(base) for mask in masks]
        assert max(distances) <= config.budget(model.hidden_size)
        assert distances == sorted(distances)


def test_brute_force_example():
    model = silent_model(SimpleRnn, 1, 3, 2, np.random.default_rng(0))
    model.params['W_out'][1] = [3.0, -3.0]
    batch = tiny_batch(np.random.default_rng(1), model, length=2, rows=1)
    base = DropoutMask.expected(3)
    mask, best = brute_force_adversarial(model, batch, base, 1,
                                         LambdaSchedule.final_step(2), 'l2')
    assert mask.hamming(base) <= 1
    assert best >= 0.0
    unit_one = weighted_distance(
        reference_predictions(model, batch, base),
        model.predict(batch.inputs, base.flipped(1).bits),
        LambdaSchedule.final_step(2), 'l2',
    )
    assert best >= unit_one


def test_brute_force_budget_zero(model, batch):
    base = DropoutMask.expected(4)
    mask, best = brute_force_adversarial(model, batch, base, 0,
                                         LambdaSchedule.final_step(3), 'js')
    assert mask == base
    assert best == 0.0


def test_brute_force_dominates_greedy(rng):
    for _ in range(20):
        model = random_model(rng, hidden_size=int(rng.integers(2, 9)), spread=2.0)
        batch = random_batch(rng, model)
        base = DropoutMask.expected(model.hidden_size)
        schedule = LambdaSchedule.uniform(batch.length)
        config = AdvConfig(0.3, 2)
        reference = reference_predictions(model, batch, base)
        greedy = adversarial_mask(model, batch, base, config, schedule, 'js', rng,
                                  reference=reference)
        _, best = brute_force_adversarial(model, batch, base,
                                          config.budget(model.hidden_size),
                                          schedule, 'js', reference=reference)
        value = weighted_distance(reference, model.predict(batch.inputs, greedy.bits),
                                  schedule, 'js')
        assert best >= value - 1e-12


def test_brute_force_too_large(rng):
    model = SimpleRnn.initialise(1, MAX_EXHAUSTIVE_SIZE + 1, 2, rng)
    batch = tiny_batch(rng, model)
    with pytest.raises(ValueError):
        brute_force_adversarial(model, batch, DropoutMask.expected(model.hidden_size), 1,
                                LambdaSchedule.final_step(3), 'l2')


def test_random_feasible_mask(rng):
    base = DropoutMask.expected(10)
    assert random_feasible_mask(base, 3, rng).hamming(base) == 3
    assert random_feasible_mask(base, 30, rng).hamming(base) == 10


def test_sample_constrained(rng):
    draws = sample_constrained(0.4, 8, 2, 500, rng)
    assert draws.shape == (500, 8)
    assert ((1 - draws).sum(axis=1) <= 2).all()
