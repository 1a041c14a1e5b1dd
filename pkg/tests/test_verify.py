import numpy as np
import pytest

from advdrop.masks import AdvConfig
from advdrop.verify import (
    SUITES,
    CheckResult,
    format_result,
    random_batch,
    random_model,
    run_suite,
    search_trial,
)


def test_format_result():
    result = CheckResult('sign rule', True, 1.0, 1.0, '')
    assert format_result(result) == 'PASS sign rule: 1 (tolerance 1)'
    failed = CheckResult('grad', False, 0.002, 1e-4, 'max error')
    assert format_result(failed) == 'FAIL grad: 0.002 (tolerance 0.0001) max error'


def test_random_instances(rng):
    model = random_model(rng, hidden_size=5, spread=0.5)
    assert model.hidden_size == 5
    assert max(np.abs(value).max() for value in model.params.values()) <= 0.5
    batch = random_batch(rng, model, length=4, rows=2, kind='per_step')
    assert batch.targets.shape == (2, 4)
    assert batch.targets.max() < model.output_size


@pytest.mark.parametrize('name, sizes', [
    ('grad', dict(count=5)),
    ('im', dict(count=4)),
    ('remark1', dict(count=2, samples=200)),
])
def test_suites_pass(name, sizes):
    results = run_suite(name, seed=1, **sizes)
    assert results
    assert all(result.passed for result in results), [
        format_result(result) for result in results
    ]


def test_flip_suite_invariants():
    results = {result.name: result for result in run_suite('flip-oracle', seed=2,
                                                           count=30, ratio_trials=0)}
    for name in ('budget invariant', 'monotone stages', 'sign rule', 'oracle dominance'):
        assert results[name].passed


def test_flip_suite_ratio_row():
    results = {result.name: result for result in run_suite('flip-oracle', seed=2,
                                                           count=0, ratio_trials=40)}
    ratio = results['greedy within 70% of exact']
    assert ratio.tolerance == 0.9
    assert ratio.detail == 'over 40 trials'
    # The single random initial flip holds this near one half.
    assert 0.2 <= ratio.value <= 1.0


def test_search_trial_bounds(rng):
    for _ in range(30):
        trial = search_trial(rng, AdvConfig(0.4, 2))
        assert trial.greedy >= 0.0
        assert trial.random >= 0.0
        assert trial.exact >= trial.greedy - 1e-12
        assert trial.exact >= trial.random - 1e-12


def test_search_trial_single_unit(rng):
    for _ in range(5):
        trial = search_trial(rng, AdvConfig(0.5, 2), sizes=(1, 1))
        assert not trial.moved
        assert abs(trial.greedy - trial.exact) <= 1e-12
        assert abs(trial.greedy - trial.random) <= 1e-12


def test_search_trial_without_exact(rng):
    trial = search_trial(rng, AdvConfig(0.4, 2), exact=False)
    assert trial.exact is None


def test_prop1_upper_bound():
    results = run_suite('prop1', seed=3, count=4, samples=300)
    assert results[0].name == 'el <= exact add'
    assert results[0].passed


def test_unknown_suite():
    with pytest.raises(ValueError):
        run_suite('everything')


def test_suite_names():
    assert set(SUITES) == {'grad', 'im', 'remark1', 'prop1', 'flip-oracle'}
