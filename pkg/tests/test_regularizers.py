import numpy as np
import pytest

from advdrop.core import TapeGraph
from advdrop.masks import AdvConfig, DropoutMask, random_feasible_mask
from advdrop.models import Lstm, SimpleRnn
from advdrop.regularizers import (
    LambdaSchedule,
    Remark1Report,
    add_regularizer,
    el_regularizer,
    fd_regularizer,
    greedy_adversary,
    proposition1_check,
    remark1_check,
    weighted_distance,
)
from advdrop.verify import random_batch, random_model

from tests.helpers import silent_model, tiny_batch


@pytest.mark.parametrize('metric', ['l2', 'js'])
def test_el_without_dropout_is_zero(model, batch, rng, metric):
    estimate = el_regularizer(model, batch, 0.0, LambdaSchedule.uniform(3), metric, 10, rng)
    assert estimate.mean == 0.0
    assert estimate.stderr == 0.0


def test_fd_without_dropout_is_zero(model, batch, rng):
    estimate = fd_regularizer(model, batch, 0.0, LambdaSchedule.uniform(3), 'js', 10, rng)
    assert estimate.mean == 0.0


def test_fd_swap_symmetric(model, batch, rng):
    first = (rng.random((20, 4)) > 0.3).astype(float)
    second = (rng.random((20, 4)) > 0.3).astype(float)
    schedule = LambdaSchedule([0.5, 0.0, 0.5])
    forward = fd_regularizer(model, batch, 0.3, schedule, 'js', 20, rng, bits=(first, second))
    backward = fd_regularizer(model, batch, 0.3, schedule, 'js', 20, rng, bits=(second, first))
    assert abs(forward.mean - backward.mean) < 1e-12


def test_estimators_are_non_negative(model, batch, rng):
    schedule = LambdaSchedule.final_step(3)
    assert el_regularizer(model, batch, 0.5, schedule, 'l2', 50, rng).mean >= 0
    assert fd_regularizer(model, batch, 0.5, schedule, 'l2', 50, rng).mean >= 0


@pytest.mark.parametrize('samples', [1, 2, 10, 25])
def test_fd_sample_count_independent_of_length(model, batch, rng, samples):
    schedule = LambdaSchedule.final_step(batch.length)
    estimate = fd_regularizer(model, batch, 0.3, schedule, 'l2', samples, rng)
    assert np.isfinite(estimate.mean)
    assert estimate.mean >= 0


def test_fd_matches_explicit_masks(model, batch, rng):
    first = np.array([[1, 0, 1, 1], [1, 1, 0, 1]], dtype=float)
    second = np.array([[0, 1, 1, 1], [1, 1, 1, 0]], dtype=float)
    schedule = LambdaSchedule([0.25, 0.25, 0.5])
    estimate = fd_regularizer(model, batch, 0.25, schedule, 'l2', 2, rng,
                              bits=(first, second))
    values = [weighted_distance(model.predict(batch.inputs, a, 4 / 3),
                                model.predict(batch.inputs, b, 4 / 3), schedule, 'l2')
              for a, b in zip(first, second)]
    assert abs(estimate.mean - np.mean(values)) < 1e-12


def test_fd_rejects_wrong_schedule_length(model, batch, rng):
    with pytest.raises(ValueError):
        fd_regularizer(model, batch, 0.3, LambdaSchedule.final_step(batch.length + 1),
                       'l2', 10, rng)


def test_estimators_need_samples(model, batch, rng):
    schedule = LambdaSchedule.final_step(3)
    with pytest.raises(ValueError):
        el_regularizer(model, batch, 0.5, schedule, 'l2', 0, rng)
    with pytest.raises(ValueError):
        fd_regularizer(model, batch, 0.5, schedule, 'l2', 0, rng)


def test_el_matches_explicit_masks(model, batch, rng):
    bits = np.array([[1, 0, 1, 1], [0, 1, 1, 1]], dtype=float)
    schedule = LambdaSchedule.final_step(3)
    estimate = el_regularizer(model, batch, 0.25, schedule, 'l2', 2, rng, bits=bits)
    reference = model.predict(batch.inputs)
    values = [weighted_distance(reference, model.predict(batch.inputs, row, 4 / 3),
                                schedule, 'l2') for row in bits]
    assert abs(estimate.mean - np.mean(values)) < 1e-12


@pytest.mark.parametrize('cls', [SimpleRnn, Lstm])
def test_add_silent_output_is_zero(cls, rng):
    model = silent_model(cls, 2, 5, 3, rng)
    batch = tiny_batch(rng, model)
    term = add_regularizer(model, batch, AdvConfig(0.4, 2), LambdaSchedule.uniform(3),
                           'js', rng)
    assert float(term.graph.value(term.node)) == 0.0


def test_add_term_parts(model, batch, rng):
    config = AdvConfig(0.5, 2)
    term = add_regularizer(model, batch, config, LambdaSchedule.final_step(3), 'l2', rng)
    assert term.base == DropoutMask.expected(4)
    assert 1 <= term.mask.hamming(term.base) <= config.budget(4)
    assert term.base_trace.graph is term.graph
    assert term.adv_trace.graph is term.graph
    assert float(term.graph.value(term.node)) >= 0
    term.graph.backward(term.node)
    assert not term.graph.grad(term.base_trace.predictions[-1]).any()
    assert term.graph.grad(term.adv_trace.weights['W_out']).any()


def test_add_uses_given_graph(model, batch, rng):
    graph = TapeGraph()
    weights = model.bind(graph)
    term = add_regularizer(model, batch, AdvConfig(0.5), LambdaSchedule.final_step(3),
                           'js', rng, graph=graph, weights=weights)
    assert term.graph is graph
    assert term.adv_trace.weights is weights


def test_add_sampled_base(model, batch, rng):
    term = add_regularizer(model, batch, AdvConfig(0.5), LambdaSchedule.final_step(3),
                           'js', rng, base_policy='sampled', p=0.3)
    assert term.base.scaling == 'inverted'
    assert term.mask.p == 0.3
    assert term.mask.hamming(term.base) <= 2


def test_add_input_dropout_allows_copy_init(model, batch, rng):
    term = add_regularizer(model, batch, AdvConfig(0.5), LambdaSchedule.final_step(3),
                           'js', rng, init='copy', input_p=0.5)
    assert term.mask.hamming(term.base) <= 2


def test_add_exact_dominates_greedy(rng):
    for _ in range(10):
        model = random_model(rng, hidden_size=int(rng.integers(3, 9)), spread=2.0)
        batch = random_batch(rng, model)
        schedule = LambdaSchedule.uniform(batch.length)
        config = AdvConfig(0.3, 2)
        greedy = add_regularizer(model, batch, config, schedule, 'js', rng)
        exact = add_regularizer(model, batch, config, schedule, 'js', rng, search='exact')
        assert (float(exact.graph.value(exact.node))
                >= float(greedy.graph.value(greedy.node)) - 1e-12)


def test_add_beats_random_feasible_mask(rng):
    wins = []
    for _ in range(500):
        model = random_model(rng, hidden_size=int(rng.integers(6, 11)), spread=2.0)
        batch = random_batch(rng, model)
        schedule = LambdaSchedule.final_step(batch.length)
        metric = rng.choice(['l2', 'js'])
        config = AdvConfig(0.4, 2)
        term = add_regularizer(model, batch, config, schedule, metric, rng)
        other = random_feasible_mask(term.base, config.budget(model.hidden_size), rng)
        random = weighted_distance(model.predict(batch.inputs),
                                   model.predict(batch.inputs, other.bits),
                                   schedule, metric)
        wins.append(float(term.graph.value(term.node)) >= random - 1e-12)
    # Measured near 0.79; the random initial flip keeps it under 0.8.
    assert np.mean(wins) >= 0.6


def test_add_weight_gradients_match_finite_differences(model, batch, rng):
    h = 1e-5
    schedule = LambdaSchedule.uniform(3)
    term = add_regularizer(model, batch, AdvConfig(0.5, 2), schedule, 'l2', rng)
    term.graph.backward(term.node)
    reference = model.predict(batch.inputs, term.base.bits, term.base.scale)

    def objective(params):
        perturbed = type(model)(params)
        return weighted_distance(
            reference,
            perturbed.predict(batch.inputs, term.mask.bits, term.mask.scale),
            schedule, 'l2',
        )

    worst = 0.0
    for name, value in model.params.items():
        analytic = term.graph.grad(term.adv_trace.weights[name])
        for index in np.ndindex(value.shape):
            plus, minus = model.copy().params, model.copy().params
            plus[name][index] += h
            minus[name][index] -= h
            numeric = (objective(plus) - objective(minus)) / (2 * h)
            worst = max(worst, abs(analytic[index] - numeric) / max(1.0, abs(numeric)))
    assert worst <= 1e-4


def test_el_estimates_agree(rng):
    model = random_model(rng, hidden_size=6, spread=2.0)
    batch = random_batch(rng, model, length=3)
    schedule = LambdaSchedule.final_step(3)
    first = el_regularizer(model, batch, 0.3, schedule, 'l2', 2000, rng)
    second = el_regularizer(model, batch, 0.3, schedule, 'l2', 2000, rng)
    assert first.stderr > 0
    assert abs(first.mean - second.mean) <= 3 * np.hypot(first.stderr, second.stderr)


def test_add_rejects(model, batch, rng):
    schedule = LambdaSchedule.final_step(3)
    with pytest.raises(ValueError):
        add_regularizer(model, batch, AdvConfig(0.5), schedule, 'js', rng, search='beam')
    with pytest.raises(ValueError):
        add_regularizer(model, batch, AdvConfig(0.5), schedule, 'js', rng,
                        search='exact', input_p=0.5)


def test_remark1_needs_samples(model, batch, rng):
    with pytest.raises(ValueError):
        remark1_check(model, batch, 0.3, 29, AdvConfig(0.5), rng)


def test_remark1_identity_adversary(model, batch, rng):
    report = remark1_check(model, batch, 0.3, 50, AdvConfig(0.5), rng,
                           adversary=lambda mask: mask)
    assert report.lhs == 0.0
    assert abs(report.rhs) < 1e-12
    assert report.consistent()


def test_remark1_constant_model(rng):
    model = silent_model(SimpleRnn, 2, 4, 3, rng)
    batch = tiny_batch(rng, model)
    report = remark1_check(model, batch, 0.3, 40, AdvConfig(0.5), rng)
    for field in Remark1Report.FIELDS:
        assert abs(getattr(report, field)) < 1e-24


def test_remark1_sides_agree(rng):
    for _ in range(3):
        model = random_model(rng, hidden_size=5, spread=2.0)
        batch = random_batch(rng, model, length=3)
        report = remark1_check(model, batch, 0.3, 200, AdvConfig(0.4, 2), rng)
        assert report.consistent()
        assert report.lhs >= 0
        assert report.var_base >= 0 and report.var_adv >= 0
        assert set(report.stderr) >= {'lhs', 'rhs', 'var_base', 'var_adv', 'cov',
                                      'mean_gap_sq', 'gap_influence'}
        assert report.stderr['mean_gap_sq'] == 0.0
        assert report.stderr['gap_influence'] >= 0.0


def test_greedy_adversary_is_a_function(model, batch):
    adversary = greedy_adversary(model, batch, AdvConfig(0.5, 2), seed=3)
    mask = DropoutMask([1, 0, 1, 1], p=0.3)
    first = adversary(mask)
    assert adversary(DropoutMask([1, 0, 1, 1], p=0.3)) == first
    other = greedy_adversary(model, batch, AdvConfig(0.5, 2), seed=3)
    assert other(mask) == first


def test_proposition1_too_large(rng):
    model = SimpleRnn.initialise(1, 13, 2, rng)
    with pytest.raises(ValueError):
        proposition1_check(model, tiny_batch(rng, model), 0.2, 0.3, 10, rng)


def test_proposition1_ordering(rng):
    for _ in range(5):
        model = random_model(rng, hidden_size=int(rng.integers(3, 8)), spread=2.0)
        batch = random_batch(rng, model, length=3)
        report = proposition1_check(model, batch, 0.2, 0.3, 500, rng)
        assert report.el <= report.add_exact + 3 * report.el_stderr + 1e-12
        assert report.fd_quarter >= 0
        assert report.add_exact >= 0
