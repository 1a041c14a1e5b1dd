"""The ``advdrop`` command line."""
import argparse
import asyncio
import csv
import logging
import os
import sys

import numpy as np

from . import __version__
from .checkpoint import (
    FINAL_CHECKPOINT,
    METRICS_FILE,
    append_metrics,
    checkpoint_name,
    git_describe,
    load_checkpoint,
    save_checkpoint,
    write_manifest,
)
from .config import ConfigError, RunConfig
from .core import NumericalError
from .data import IMAGE_KINDS, SYNTHETIC_KINDS, load_corpus, load_idx, synth_task, to_sequence
from .models import Lstm, SimpleRnn
from .training import DivergenceError, TrainState, evaluate, fit, perplexity
from .utils import mask_statistics, perturbed_accuracies
from .verify import SUITES, format_result, run_suite

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT_ERROR = 2
EXIT_NUMERIC_ERROR = 3

MODELS = dict(lstm=Lstm, rnn=SimpleRnn)

FLAG_FIELDS = (
    ('task', 'task'),
    ('reg', 'regularizer'),
    ('epochs', 'epochs'),
    ('p', 'p'),
    ('delta', 'delta'),
    ('k', 'k'),
    ('lambda_schedule', 'lambda_schedule'),
    ('metric', 'metric'),
    ('seed', 'seed'),
    ('out', 'out'),
)
"""Pairs of parsed flag attribute and configuration field."""

QUICK_SIZES = {
    'grad': dict(count=10),
    'im': dict(count=6),
    'remark1': dict(count=2, samples=300),
    'prop1': dict(count=5, samples=300),
    'flip-oracle': dict(count=50, ratio_trials=10),
}


def _key_value(text):
    if '=' not in text:
        raise argparse.ArgumentTypeError('expected key=value: {!r}'.format(text))
    key, value = text.split('=', 1)
    return key.strip(), value.strip()


def build_config(args):
    """File values, then ``ADVDROP_SEED``, then flags and ``--set`` pairs."""
    config = RunConfig.load(args.config) if args.config else RunConfig()
    config = RunConfig.from_env(config)
    overrides = dict(getattr(args, 'set', None) or ())
    for attr, field in FLAG_FIELDS:
        value = getattr(args, attr, None)
        if value is not None:
            overrides[field] = value
    return config.override(overrides) if overrides else config


def build_tasks(config, rng):
    """The training, validation and test tasks described by ``config``.

    Returns:
      :py:class:`tuple`: ``(train, validation, test)``; validation and
      test are ``None`` when empty.

    """
    if config.task in SYNTHETIC_KINDS:
        total = config.train_size + config.test_size
        task = synth_task(config.task, total, rng, length=config.length,
                          delay=config.delay, symbols=config.symbols)
        train, test = task.split(config.train_size)
    elif config.task in IMAGE_KINDS:
        if not (config.train_images and config.train_labels):
            raise ConfigError('image tasks need train_images and train_labels',
                              key='train_images')
        images = load_idx(config.train_images, config.train_labels)
        train = to_sequence(images.take(slice(None, config.train_size)), config.task,
                            side=config.side, seed=config.permutation_seed)
        test = None
        if config.test_images and config.test_labels:
            images = load_idx(config.test_images, config.test_labels)
            test = to_sequence(images.take(slice(None, config.test_size or None)),
                               config.task, side=config.side,
                               seed=config.permutation_seed)
    else:
        if not config.corpus:
            raise ConfigError('char_lm needs a corpus', key='corpus')
        task = load_corpus(config.corpus, config.context)
        held_out = min(config.test_size, len(task) - 1)
        train, test = task.split(len(task) - held_out)
    validation = None
    if config.validation_size:
        validation, train = train.split(config.validation_size)
    if test is not None and not len(test):
        test = None
    logger.info('tasks: train %r, validation %r, test %r', train, validation, test)
    return train, validation, test


def _seeds(config):
    data, model, training = np.random.SeedSequence(config.seed).spawn(3)
    return (np.random.default_rng(data), np.random.default_rng(model),
            np.random.default_rng(training))


def cmd_train(args):
    config = build_config(args)
    data_rng, model_rng, train_rng = _seeds(config)
    train, validation, test = build_tasks(config, data_rng)
    model = MODELS[config.model].initialise(train.input_size, config.hidden_size,
                                            train.output_size, model_rng)
    os.makedirs(config.out, exist_ok=True)
    write_manifest(config.out, config, __version__, git_describe())
    metrics_path = os.path.join(config.out, METRICS_FILE)
    open(metrics_path, 'w', encoding='utf-8').close()

    def record(state, metrics):
        append_metrics(metrics_path, metrics)
        if config.checkpoint_every and metrics.epoch % config.checkpoint_every == 0:
            save_checkpoint(os.path.join(config.out, checkpoint_name(metrics.epoch)),
                            state.model)

    state = TrainState(model, config.train_config(), rng=train_rng)
    fit(state, train, validation, test, callback=record)
    save_checkpoint(os.path.join(config.out, FINAL_CHECKPOINT), state.model)
    logger.info('wrote %s (config %s)', config.out, config.digest())
    return EXIT_OK


def _test_batches(config):
    train, _, test = build_tasks(config, _seeds(config)[0])
    return (train if test is None else test).batches(config.batch_size)


def cmd_eval(args):
    config = build_config(args)
    model = load_checkpoint(args.checkpoint)
    batches = _test_batches(config)
    print('test_error = {!r}'.format(evaluate(model, batches)))
    if config.task == 'char_lm':
        print('perplexity = {!r}'.format(perplexity(model, batches)))
    return EXIT_OK


def cmd_verify(args):
    sizes = QUICK_SIZES[args.suite] if args.quick else {}
    results = run_suite(args.suite, seed=args.seed, **sizes)
    for result in results:
        print(format_result(result))
    return EXIT_OK if all(result.passed for result in results) else EXIT_CHECK_FAILED


def _write_rows(path, header, rows):
    handle = sys.stdout if path in (None, '-') else open(path, 'w', newline='')
    try:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if handle is not sys.stdout:
            handle.close()


def cmd_histogram(args):
    config = build_config(args)
    model = load_checkpoint(args.checkpoint)
    random, adversarial = asyncio.run(perturbed_accuracies(
        model, _test_batches(config), n_masks=args.n_masks, p=args.mask_p,
        delta=args.mask_delta, k=args.mask_k, seed=config.seed, metric=config.metric,
    ))
    _write_rows(args.output, ('random', 'adversarial'),
                ([repr(a), repr(b)] for a, b in zip(random, adversarial)))
    return EXIT_OK


def cmd_maskstats(args):
    config = build_config(args)
    models = [load_checkpoint(path) for path in args.checkpoints]
    matrix = mask_statistics(models, _test_batches(config), delta=config.delta,
                             k=config.k, seed=config.seed, metric=config.metric)
    header = ['checkpoint'] + ['unit_{}'.format(unit) for unit in range(matrix.shape[1])]
    _write_rows(args.output, header, (
        [os.path.basename(path)] + [repr(float(value)) for value in row]
        for path, row in zip(args.checkpoints, matrix)
    ))
    return EXIT_OK


def _add_config_flags(parser, run_flags=True):
    parser.add_argument('--config', help='run configuration file')
    parser.add_argument('--set', type=_key_value, action='append', metavar='KEY=VALUE',
                        help='override any configuration field')
    parser.add_argument('--task')
    parser.add_argument('--seed')
    parser.add_argument('--metric')
    if run_flags:
        parser.add_argument('--reg', help='none, el, fd or add')
        parser.add_argument('--epochs')
        parser.add_argument('--p', help='dropout probability')
        parser.add_argument('--delta', help='adversarial budget fraction')
        parser.add_argument('--k', help='adversarial search stages')
        parser.add_argument('--lambda-schedule', help='last or uniform')
        parser.add_argument('--out', help='output directory')


def build_parser():
    parser = argparse.ArgumentParser(prog='advdrop', description=__doc__)
    parser.add_argument('--version', action='version', version=__version__)
    parser.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True

    train = commands.add_parser('train', help='train a model')
    _add_config_flags(train)
    train.set_defaults(handler=cmd_train)

    evaluate_ = commands.add_parser('eval', help='score a checkpoint')
    _add_config_flags(evaluate_)
    evaluate_.add_argument('--checkpoint', required=True)
    evaluate_.set_defaults(handler=cmd_eval)

    verify = commands.add_parser('verify', help='run a property suite')
    verify.add_argument('suite', choices=sorted(SUITES))
    verify.add_argument('--seed', type=int, default=0)
    verify.add_argument('--quick', action='store_true', help='fewer instances')
    verify.set_defaults(handler=cmd_verify)

    histogram = commands.add_parser('histogram', help='random vs adversarial accuracies')
    _add_config_flags(histogram, run_flags=False)
    histogram.add_argument('--checkpoint', required=True)
    histogram.add_argument('--n-masks', type=int, default=500)
    histogram.add_argument('--p', dest='mask_p', type=float, default=0.03)
    histogram.add_argument('--delta', dest='mask_delta', type=float, default=0.03)
    histogram.add_argument('--k', dest='mask_k', type=int, default=2)
    histogram.add_argument('--output', help='CSV path (default stdout)')
    histogram.set_defaults(handler=cmd_histogram)

    maskstats = commands.add_parser('maskstats', help='adversarial mask averages')
    _add_config_flags(maskstats, run_flags=False)
    maskstats.add_argument('--delta')
    maskstats.add_argument('--k')
    maskstats.add_argument('checkpoints', nargs='+')
    maskstats.add_argument('--output', help='CSV path (default stdout)')
    maskstats.set_defaults(handler=cmd_maskstats)
    return parser


def main(argv=None):
    """Run the command line; returns the exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(levelname)s %(name)s: %(message)s',
    )
    try:
        return args.handler(args)
    except (ConfigError, ValueError, OSError) as error:
        print('advdrop: error: {}'.format(error), file=sys.stderr)
        return EXIT_INPUT_ERROR
    except (DivergenceError, NumericalError) as error:
        print('advdrop: numeric error: {}'.format(error), file=sys.stderr)
        return EXIT_NUMERIC_ERROR


if __name__ == '__main__':
    sys.exit(main())
