"""Checkpoint files, the metrics CSV and the run manifest.

A checkpoint is the magic bytes ``ADRN``, a little-endian ``u32`` format
version and blob count, then per blob: a ``u32`` name length, the UTF-8
name, a ``u32`` dimension count, one ``u32`` per dimension and the values
as little-endian 64-bit floats.

"""
from collections import OrderedDict
import csv
import logging
import os
import struct
import subprocess

import numpy as np

from .models import BaseModel
from .training import EpochMetrics

logger = logging.getLogger(__name__)

MAGIC = b'ADRN'
VERSION = 1

CONFIG_FILE = 'config.txt'
MANIFEST_FILE = 'manifest.txt'
METRICS_FILE = 'metrics.csv'
FINAL_CHECKPOINT = 'final.adrn'


class CheckpointError(ValueError):
    """A checkpoint file is malformed."""


def dump_arrays(arrays):
    """Serialize named arrays into checkpoint bytes."""
    parts = [MAGIC, struct.pack('<II', VERSION, len(arrays))]
    for name, array in arrays.items():
        encoded = name.encode('utf-8')
        array = np.ascontiguousarray(array, dtype='<f8')
        parts.append(struct.pack('<I', len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack('<{}I'.format(array.ndim + 1), array.ndim, *array.shape))
        parts.append(array.tobytes())
    return b''.join(parts)


class _Reader:

    def __init__(self, data):
        self.data = data
        self.offset = 0

    def take(self, size):
        if self.offset + size > len(self.data):
            raise CheckpointError('unexpected EOF at byte {}'.format(self.offset))
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_arrays(data):
    """Parse checkpoint bytes into named float64 arrays.

    Returns:
      :py:class:`collections.OrderedDict`: Name to array, in file order.

    Raises:
      :py:class:`CheckpointError`: On bad magic, an unknown version or
        truncated data.

    """
    reader = _Reader(data)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError('bad magic: {!r}'.format(data[:len(MAGIC)]))
    version, count = reader.unpack('<II')
    if version != VERSION:
        raise CheckpointError('unsupported version: {!r}'.format(version))
    arrays = OrderedDict()
    for _ in range(count):
        (length,) = reader.unpack('<I')
        name = reader.take(length).decode('utf-8')
        (ndim,) = reader.unpack('<I')
        shape = reader.unpack('<{}I'.format(ndim))
        size = int(np.prod(shape))
        values = np.frombuffer(reader.take(8 * size), dtype='<f8')
        arrays[name] = values.astype(np.float64).reshape(shape)
    if reader.offset != len(data):
        raise CheckpointError('{} trailing bytes'.format(len(data) - reader.offset))
    return arrays


def save_checkpoint(path, model):
    with open(path, 'wb') as handle:
        handle.write(dump_arrays(model.params))
    logger.debug('wrote checkpoint %s', path)


def load_checkpoint(path):
    """Load a model from a checkpoint file.

    Returns:
      :py:class:`~.BaseModel`: The matching model subclass.

    """
    with open(path, 'rb') as handle:
        arrays = parse_arrays(handle.read())
    try:
        return BaseModel.from_arrays(arrays)
    except ValueError as error:
        raise CheckpointError(str(error)) from error


def checkpoint_name(epoch):
    return 'epoch-{:04d}.adrn'.format(epoch)


def append_metrics(path, metrics):
    """Append one :py:class:`~.EpochMetrics` row, writing the header first
    if the file is new."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, 'a', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        if new:
            writer.writerow(EpochMetrics._fields)
        writer.writerow([metrics.epoch] + [repr(float(value)) for value in metrics[1:]])


def read_metrics(path):
    """Read a metrics CSV back into :py:class:`~.EpochMetrics` rows."""
    with open(path, newline='', encoding='utf-8') as handle:
        reader = csv.reader(handle)
        header = next(reader)
        if tuple(header) != EpochMetrics._fields:
            raise ValueError('unexpected metrics header: {!r}'.format(header))
        return [EpochMetrics(int(row[0]), *(float(value) for value in row[1:]))
                for row in reader]


def git_describe(cwd=None):
    """``git describe --always --dirty`` of ``cwd``, or ``None``."""
    try:
        result = subprocess.run(
            ['git', 'describe', '--always', '--dirty'],
            cwd=cwd, capture_output=True, check=True, text=True,
        )
    except (OSError, subprocess.CalledProcessError):
        logger.warning('git describe unavailable; manifest records none')
        return None
    return result.stdout.strip() or None


def write_manifest(directory, config, version, describe=None):
    """Write the canonical configuration and the run manifest.

    The manifest holds the configuration hash, the seed, the package
    version and the ``git describe`` string (``none`` if unavailable).

    Returns:
      :py:class:`str`: The manifest path.

    """
    with open(os.path.join(directory, CONFIG_FILE), 'w', encoding='utf-8') as handle:
        handle.write(config.canonical())
    path = os.path.join(directory, MANIFEST_FILE)
    with open(path, 'w', encoding='utf-8') as handle:
        handle.write('config_hash = {}\n'.format(config.digest()))
        handle.write('seed = {}\n'.format(config.seed))
        handle.write('version = {}\n'.format(version))
        handle.write('git_describe = {}\n'.format(describe or 'none'))
    return path


def read_manifest(path):
    """Parse a manifest into a :py:class:`dict` of strings."""
    entries = OrderedDict()
    with open(path, encoding='utf-8') as handle:
        for line in handle:
            if '=' in line:
                key, value = (part.strip() for part in line.split('=', 1))
                entries[key] = value
    return entries
