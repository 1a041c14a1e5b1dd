"""Datasets and sequence tasks.

MNIST images arrive in the IDX container (optionally gzip-compressed) and
are turned into pixel sequences; a plain-text corpus gives a character
language-modelling task; parity and copy are small synthetic tasks whose
labels have closed forms.

"""
import gzip
import logging
import struct

import numpy as np

from .models import SequenceBatch

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
UBYTE = 0x08
GZIP_MAGIC = b'\x1f\x8b'

TASK_KINDS = ('scanline', 'permuted', 'downsampled', 'char_lm', 'parity', 'copy')
""":py:class:`tuple`: The kinds of :py:class:`SequenceTask`."""

IMAGE_KINDS = TASK_KINDS[:3]

SYNTHETIC_KINDS = ('parity', 'copy')


class IdxFormatError(ValueError):
    """Malformed IDX data: bad magic, unexpected EOF or count mismatch."""


class ImageSet:
    """Greyscale images and their class labels.

    Arguments:
      images (:py:class:`numpy.ndarray`): ``[N, rows, cols]`` bytes.
      labels (:py:class:`numpy.ndarray`): ``[N]`` labels in ``[0, 9]``.

    """

    def __init__(self, images, labels):
        images = np.asarray(images, dtype=np.uint8)
        labels = np.asarray(labels, dtype=np.uint8)
        if images.ndim != 3:
            raise ValueError('images must be [N, rows, cols]: {!r}'.format(images.shape))
        if labels.shape != images.shape[:1]:
            raise IdxFormatError('count mismatch: {} images, {} labels'.format(
                len(images), len(labels),
            ))
        if labels.size and labels.max() > 9:
            raise ValueError('labels must be digits: {!r}'.format(int(labels.max())))
        self.images = images
        self.labels = labels

    def __len__(self):
        return len(self.labels)

    def __eq__(self, other):
        return (isinstance(other, ImageSet)
                and np.array_equal(self.images, other.images)
                and np.array_equal(self.labels, other.labels))

    def __repr__(self):
        return 'ImageSet(count={}, shape={!r})'.format(len(self), self.images.shape[1:])

    def take(self, rows):
        return ImageSet(self.images[rows], self.labels[rows])


def parse_idx(data, magic=None):
    """Parse unsigned-byte IDX ``data`` into an array.

    Arguments:
      data (:py:class:`bytes`): The file contents.
      magic (:py:class:`int`, optional): The required magic number.

    Returns:
      :py:class:`numpy.ndarray`: ``uint8`` values shaped by the header.

    Raises:
      :py:class:`IdxFormatError`: On a bad magic number or short data.

    """
    if len(data) < 4:
        raise IdxFormatError('unexpected EOF in header')
    (found,) = struct.unpack('>I', data[:4])
    if found >> 16 != 0 or (found >> 8) & 0xff != UBYTE or (
            magic is not None and found != magic):
        raise IdxFormatError('bad magic: {:#010x}'.format(found))
    ndim = found & 0xff
    end = 4 + 4 * ndim
    if len(data) < end:
        raise IdxFormatError('unexpected EOF in dimensions')
    dims = struct.unpack('>{}I'.format(ndim), data[4:end])
    size = int(np.prod(dims))
    if len(data) < end + size:
        raise IdxFormatError('unexpected EOF: {} of {} payload bytes'.format(
            len(data) - end, size,
        ))
    if len(data) > end + size:
        raise IdxFormatError('count mismatch: {} trailing bytes'.format(
            len(data) - end - size,
        ))
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=end).reshape(dims)


def dump_idx(array):
    """Serialize a ``uint8`` array as IDX bytes."""
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError('only unsigned bytes are supported: {!r}'.format(array.dtype))
    header = struct.pack('>I', (UBYTE << 8) | array.ndim)
    header += struct.pack('>{}I'.format(array.ndim), *array.shape)
    return header + array.tobytes()


def read_idx(path, magic=None):
    """Read an IDX file, decompressing it if it is gzipped."""
    with open(path, 'rb') as handle:
        data = handle.read()
    if data[:2] == GZIP_MAGIC:
        data = gzip.decompress(data)
    return parse_idx(data, magic)


def load_idx(images_path, labels_path):
    """Load an :py:class:`ImageSet` from a pair of IDX files.

    Raises:
      :py:class:`IdxFormatError`: If either file is malformed or the
        counts differ.

    """
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    logger.info('loaded %d images of %r from %s', len(images), images.shape[1:],
                images_path)
    return ImageSet(images, labels)


class SequenceTask:
    """Sequences with labels, stored example-major.

    Arguments:
      kind (:py:class:`str`): One of :py:data:`TASK_KINDS`.
      inputs (:py:class:`numpy.ndarray`): ``[N, T, D_in]`` values.
      targets (:py:class:`numpy.ndarray`): ``[N]`` or ``[N, T]`` labels.
      output_size (:py:class:`int`): ``M``, the number of classes.
      params (:py:class:`dict`, optional): How the task was built (for
        instance the permutation seed).

    """

    def __init__(self, kind, inputs, targets, output_size, params=None):
        if kind not in TASK_KINDS:
            raise ValueError('unknown task kind: {!r}'.format(kind))
        inputs = np.asarray(inputs, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.int64)
        if inputs.ndim != 3 or len(targets) != len(inputs):
            raise ValueError('inputs {!r} do not match targets {!r}'.format(
                inputs.shape, targets.shape,
            ))
        self.kind = kind
        self.inputs = inputs
        self.targets = targets
        self.output_size = int(output_size)
        self.params = params or {}

    def __len__(self):
        return len(self.inputs)

    def __repr__(self):
        return 'SequenceTask(kind={!r}, count={}, length={}, input_size={})'.format(
            self.kind, len(self), self.length, self.input_size,
        )

    @property
    def length(self):
        return self.inputs.shape[1]

    @property
    def input_size(self):
        return self.inputs.shape[2]

    @property
    def target_kind(self):
        return 'per_step' if self.targets.ndim == 2 else 'final'

    def take(self, rows):
        return SequenceTask(self.kind, self.inputs[rows], self.targets[rows],
                            self.output_size, self.params)

    def split(self, count):
        """The first ``count`` examples and the rest, as two tasks."""
        return self.take(slice(None, count)), self.take(slice(count, None))

    def batch(self, rows):
        """A time-major :py:class:`~.SequenceBatch` of ``rows``."""
        return SequenceBatch(self.inputs[rows].transpose(1, 0, 2),
                             self.targets[rows], self.target_kind)

    def batches(self, batch_size, rng=None):
        """Split into batches, shuffled first if ``rng`` is given.

        Returns:
          :py:class:`list`: :py:class:`~.SequenceBatch` objects.

        """
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        return [self.batch(order[start:start + batch_size])
                for start in range(0, len(self), batch_size)]


def pixel_permutation(seed, size):
    """The fixed pixel order of a permuted task."""
    return np.random.default_rng(seed).permutation(size)


def downsample(images, side):
    """Average-pool ``[N, rows, cols]`` images to ``[N, side, side]``.

    Block edges are ``floor(linspace(0, extent, side + 1))``, so blocks
    differ in size by at most one pixel when ``side`` doesn't divide the
    image.

    """
    rows, cols = images.shape[1:]
    if not 1 <= side <= min(rows, cols):
        raise ValueError('side must be in [1, {}]: {!r}'.format(min(rows, cols), side))
    row_edges = np.floor(np.linspace(0, rows, side + 1)).astype(int)
    col_edges = np.floor(np.linspace(0, cols, side + 1)).astype(int)
    pooled = np.add.reduceat(images.astype(np.float64), row_edges[:-1], axis=1)
    pooled = np.add.reduceat(pooled, col_edges[:-1], axis=2)
    areas = np.outer(np.diff(row_edges), np.diff(col_edges))
    return pooled / areas


def to_sequence(images, kind='scanline', side=8, seed=0):
    """Turn an :py:class:`ImageSet` into a pixel-sequence task.

    Arguments:
      images (:py:class:`ImageSet`): The images.
      kind (:py:class:`str`, optional): ``'scanline'``, ``'permuted'``
        or ``'downsampled'``.
      side (:py:class:`int`, optional): Pooled side for
        ``'downsampled'``.
      seed (:py:class:`int`, optional): Permutation seed for
        ``'permuted'``.

    Returns:
      :py:class:`SequenceTask`: One pixel per step (``D_in = 1``), values
      in ``[0, 1]``.

    """
    if kind not in IMAGE_KINDS:
        raise ValueError('not an image task: {!r}'.format(kind))
    params = {}
    if kind == 'downsampled':
        pixels = downsample(images.images, side).reshape(len(images), -1) / 255.0
        params['side'] = side
    else:
        pixels = images.images.reshape(len(images), -1) / 255.0
    if kind == 'permuted':
        order = pixel_permutation(seed, pixels.shape[1])
        pixels = pixels[:, order]
        params.update(seed=seed, permutation=order)
    return SequenceTask(kind, pixels[:, :, None], images.labels, 10, params)


def char_corpus(text, context):
    """Next-byte prediction over non-overlapping windows of ``text``.

    Arguments:
      text (:py:class:`bytes` or :py:class:`str`): The corpus.
      context (:py:class:`int`): ``T``, the window length.

    Returns:
      :py:class:`SequenceTask`: One-hot inputs over the bytes present,
      per-step targets.

    """
    if isinstance(text, str):
        text = text.encode('utf-8')
    if context < 1:
        raise ValueError('context must be positive: {!r}'.format(context))
    vocab = sorted(set(text))
    lookup = np.zeros(256, dtype=np.int64)
    lookup[vocab] = np.arange(len(vocab))
    ids = lookup[np.frombuffer(text, dtype=np.uint8)]
    count = (len(ids) - 1) // context
    if count < 1:
        raise ValueError('corpus shorter than one window: {} bytes'.format(len(text)))
    windows = ids[:count * context + 1]
    inputs = windows[:-1].reshape(count, context)
    targets = windows[1:].reshape(count, context)
    return SequenceTask('char_lm', np.eye(len(vocab))[inputs], targets, len(vocab),
                        dict(vocab=bytes(vocab), context=context))


def load_corpus(path, context):
    """:py:func:`char_corpus` over the bytes of a text file."""
    with open(path, 'rb') as handle:
        return char_corpus(handle.read(), context)


def synth_task(kind, size, rng, length=8, delay=0, symbols=4):
    """A synthetic task whose labels have a closed form.

    * ``parity``: a binary stream; the label is the XOR of all bits.
    * ``copy``: a stream of one-hot symbols; the label is the symbol
      ``delay`` steps before the last one.

    Arguments:
      kind (:py:class:`str`): ``'parity'`` or ``'copy'``.
      size (:py:class:`int`): Number of examples.
      rng (:py:class:`numpy.random.Generator`): The stream source.
      length (:py:class:`int`, optional): ``T``.
      delay (:py:class:`int`, optional): Copy delay, below ``length``.
      symbols (:py:class:`int`, optional): Copy alphabet size.

    Returns:
      :py:class:`SequenceTask`: The task.

    """
    if kind == 'parity':
        bits = rng.integers(0, 2, (size, length))
        return SequenceTask(kind, bits[:, :, None], bits.sum(axis=1) % 2, 2,
                            dict(length=length))
    if kind == 'copy':
        if not 0 <= delay < length:
            raise ValueError('delay must be in [0, {}): {!r}'.format(length, delay))
        stream = rng.integers(0, symbols, (size, length))
        return SequenceTask(kind, np.eye(symbols)[stream], stream[:, length - 1 - delay],
                            symbols, dict(length=length, delay=delay))
    raise ValueError('unknown synthetic task: {!r}'.format(kind))
