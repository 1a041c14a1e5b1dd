import struct

import numpy as np

from advdrop.models import SequenceBatch


def idx_bytes(array, magic_type=0x08):
    """IDX bytes for ``array``, packed independently of the reader."""
    array = np.asarray(array, dtype=np.uint8)
    header = struct.pack('>HBB', 0, magic_type, array.ndim)
    header += b''.join(struct.pack('>I', dim) for dim in array.shape)
    return header + array.tobytes()


def write_idx_pair(directory, images, labels, name='train'):
    images_path = directory / '{}-images-idx3-ubyte'.format(name)
    labels_path = directory / '{}-labels-idx1-ubyte'.format(name)
    images_path.write_bytes(idx_bytes(images))
    labels_path.write_bytes(idx_bytes(labels))
    return str(images_path), str(labels_path)


def random_images(rng, count, side=28):
    return (rng.integers(0, 256, (count, side, side)).astype(np.uint8),
            rng.integers(0, 10, count).astype(np.uint8))


def silent_model(cls, input_size, hidden_size, output_size, rng):
    """A model whose output layer ignores the hidden state."""
    model = cls.initialise(input_size, hidden_size, output_size, rng)
    model.params['W_out'] = np.zeros_like(model.params['W_out'])
    model.params['b_out'] = rng.uniform(-1, 1, output_size)
    return model


def tiny_batch(rng, model, length=3, rows=2):
    return SequenceBatch(rng.uniform(-1, 1, (length, rows, model.input_size)),
                         rng.integers(0, model.output_size, rows))


def config_text(**values):
    return ''.join('{} = {}\n'.format(key, value) for key, value in values.items())
