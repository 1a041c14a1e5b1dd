"""Analyses of how trained models respond to dropout masks."""
import asyncio
import logging

import numpy as np

from .distances import LambdaSchedule
from .masks import AdvConfig, DropoutMask, adversarial_mask, sample_mask
from .training import error_counts

logger = logging.getLogger(__name__)


def masked_accuracy(model, batches, choose):
    """Accuracy when each batch is evaluated under ``choose(batch)``.

    Arguments:
      model (:py:class:`~.BaseModel`): The model.
      batches (:py:class:`collections.abc.Sequence`): The labelled
        :py:class:`~.SequenceBatch` objects.
      choose (:py:class:`collections.abc.Callable`): Maps a batch to the
        :py:class:`~.DropoutMask` to evaluate it under.

    Returns:
      :py:class:`float`: Correct over total.

    """
    wrong = total = 0
    for batch in batches:
        batch_wrong, batch_total = error_counts(model, batch, choose(batch))
        wrong += batch_wrong
        total += batch_total
    return 1.0 - wrong / total


def random_mask_accuracy(model, batches, p, rng):
    """Accuracy of one randomly masked subnetwork (drop probability ``p``)."""
    mask = sample_mask(p, model.hidden_size, rng)
    return masked_accuracy(model, batches, lambda _: mask)


def adversarial_mask_accuracy(model, batches, config, rng, metric='js'):
    """Accuracy when every batch gets its own adversarial mask.

    The search starts at the expected mask and maximises the final-step
    distance.

    """
    base = DropoutMask.expected(model.hidden_size)

    def choose(batch):
        schedule = LambdaSchedule.final_step(batch.length)
        return adversarial_mask(model, batch, base, config, schedule, metric, rng)

    return masked_accuracy(model, batches, choose)


async def perturbed_accuracies(model, batches, n_masks=500, p=0.03, delta=0.03,
                               k=2, seed=0, metric='js', executor=None):
    """Accuracies of randomly and adversarially masked subnetworks.

    Each mask evaluation runs in ``executor`` (the loop's default thread
    pool if not given) with its own generator spawned from ``seed``, so
    results don't depend on scheduling.

    Arguments:
      model (:py:class:`~.BaseModel`): The trained model (read only).
      batches (:py:class:`collections.abc.Sequence`): The test batches.
      n_masks (:py:class:`int`, optional): Masks per column.
      p (:py:class:`float`, optional): Random mask drop probability.
      delta (:py:class:`float`, optional): Adversarial budget fraction.
      k (:py:class:`int`, optional): Adversarial search stages.
      seed (:py:class:`int`, optional): The root seed.
      metric (:py:class:`str`, optional): Search distance metric.
      executor (:py:class:`concurrent.futures.Executor`, optional): Where
        the evaluations run.

    Returns:
      :py:class:`tuple`: Lists of random and adversarial accuracies.

    """
    if n_masks < 1:
        raise ValueError('need at least one mask: {!r}'.format(n_masks))
    config = AdvConfig(delta, k)
    config.stalls(model.hidden_size)
    batches = list(batches)
    loop = asyncio.get_running_loop()
    children = np.random.SeedSequence(seed).spawn(2 * n_masks)
    random_jobs = [
        loop.run_in_executor(executor, random_mask_accuracy, model, batches, p,
                             np.random.default_rng(child))
        for child in children[:n_masks]
    ]
    adversarial_jobs = [
        loop.run_in_executor(executor, adversarial_mask_accuracy, model, batches,
                             config, np.random.default_rng(child), metric)
        for child in children[n_masks:]
    ]
    random = await asyncio.gather(*random_jobs)
    adversarial = await asyncio.gather(*adversarial_jobs)
    logger.info('mean accuracy over %d masks: random %.4f, adversarial %.4f',
                n_masks, np.mean(random), np.mean(adversarial))
    return list(random), list(adversarial)


def mask_statistics(models, batches, delta=0.03, k=2, seed=0, metric='js'):
    """Mean adversarial mask bit per hidden unit, for each model.

    Every batch contributes its adversarial mask once per example.

    Arguments:
      models (:py:class:`collections.abc.Sequence`): Models in training
        order (e.g. per-epoch checkpoints).
      batches (:py:class:`collections.abc.Sequence`): The test batches.

    Returns:
      :py:class:`numpy.ndarray`: ``[len(models), H]`` values in ``[0, 1]``.

    Raises:
      :py:class:`ValueError`: If the models differ in hidden size.

    """
    sizes = {model.hidden_size for model in models}
    if len(sizes) != 1:
        raise ValueError('inconsistent hidden sizes: {!r}'.format(sorted(sizes)))
    config = AdvConfig(delta, k)
    config.stalls(sizes.pop())
    batches = list(batches)
    rows = []
    for model, child in zip(models, np.random.SeedSequence(seed).spawn(len(models))):
        rng = np.random.default_rng(child)
        base = DropoutMask.expected(model.hidden_size)
        total = np.zeros(model.hidden_size)
        count = 0
        for batch in batches:
            mask = adversarial_mask(model, batch, base, config,
                                    LambdaSchedule.final_step(batch.length),
                                    metric, rng)
            total += mask.bits * len(batch)
            count += len(batch)
        rows.append(total / count)
    return np.array(rows)
