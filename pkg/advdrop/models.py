"""Recurrent models with a time-invariant dropout mask on ``h_{t-1}``.

Two code paths evaluate the same equations:

* the tape path (:py:func:`forward_sequence`) records every step on a
  :py:class:`~.TapeGraph` so gradients with respect to the weights and to
  a relaxed mask leaf are available;
* the array path (:py:meth:`BaseModel.predict`) evaluates a whole stack
  of masks at once with plain :py:mod:`numpy`, for Monte Carlo estimates,
  exhaustive search and evaluation.

"""
from collections import OrderedDict
import logging

import numpy as np

from .core import TapeGraph, sigmoid, softmax, tensor

logger = logging.getLogger(__name__)

TASK_KINDS = ('final', 'per_step')
""":py:class:`tuple`: Where a :py:class:`SequenceBatch` carries labels."""


def keep_scale(p):
    """The inverted-dropout scaling ``1 / (1 - p)``.

    Raises:
      :py:class:`ValueError`: If ``p`` is outside ``[0, 1)``.

    """
    if not 0.0 <= p < 1.0:
        raise ValueError('dropout probability must be in [0, 1): {!r}'.format(p))
    return 1.0 / (1.0 - p)


class SequenceBatch:
    """A batch of equal-length sequences and their labels.

    Arguments:
      inputs (:py:class:`numpy.ndarray`): Shape ``[T, B, D_in]``.
      targets (:py:class:`numpy.ndarray`): Integer labels, shape ``[B]``
        for ``'final'`` tasks or ``[B, T]`` for ``'per_step'`` tasks.
      kind (:py:class:`str`, optional): One of :py:data:`TASK_KINDS`.

    """

    def __init__(self, inputs, targets, kind='final'):
        inputs = tensor(inputs)
        targets = np.asarray(targets, dtype=np.int64)
        if inputs.ndim != 3 or inputs.shape[0] < 1:
            raise ValueError('inputs must be [T, B, D] with T >= 1: {!r}'.format(
                inputs.shape,
            ))
        if kind not in TASK_KINDS:
            raise ValueError('unknown task kind: {!r}'.format(kind))
        expected = inputs.shape[1:2] if kind == 'final' else inputs.shape[1::-1]
        if targets.shape != expected:
            raise ValueError('targets shape {!r} does not match inputs {!r}'.format(
                targets.shape, inputs.shape,
            ))
        if targets.size and targets.min() < 0:
            raise ValueError('labels must be non-negative')
        self.inputs = inputs
        self.targets = targets
        self.kind = kind

    def __len__(self):
        return self.inputs.shape[1]

    def __repr__(self):
        return 'SequenceBatch(length={}, size={}, kind={!r})'.format(
            self.length, len(self), self.kind,
        )

    @property
    def length(self):
        return self.inputs.shape[0]

    def take(self, rows):
        """A new batch holding only ``rows``."""
        rows = np.asarray(rows)
        targets = self.targets[rows]
        return SequenceBatch(self.inputs[:, rows], targets, self.kind)


class ForwardTrace:
    """The recorded result of one unrolled forward pass.

    Attributes:
      graph (:py:class:`~.TapeGraph`): The tape holding the pass.
      mask (:py:class:`int`): The mask leaf consumed at every step.
      weights (:py:class:`dict`): Parameter name to leaf id.
      hidden (:py:class:`list`): Hidden-state node ids ``h_1..h_T``.
      predictions (:py:class:`list`): Softmax node ids ``p_1..p_T``.

    """

    def __init__(self, graph, mask, weights, hidden, predictions):
        self.graph = graph
        self.mask = mask
        self.weights = weights
        self.hidden = hidden
        self.predictions = predictions

    def __len__(self):
        return len(self.predictions)

    def probabilities(self):
        """:py:class:`numpy.ndarray`: Predictions stacked as ``[T, B, M]``."""
        return np.stack([self.graph.value(node) for node in self.predictions])


class BaseModel:
    """Base recurrent classifier functionality.

    Arguments:
      params (:py:class:`dict`): Parameter name to array.

    """

    GATES = ()
    """:py:class:`tuple`: The gate suffixes of the recurrent cell."""

    KIND = None
    """:py:class:`str`: The name recorded in checkpoints and configs."""

    OUTPUT_PARAMS = ('W_out', 'b_out')

    def __init__(self, params):
        missing = set(self.param_names()) - set(params)
        if missing:
            raise ValueError('missing parameters: {!r}'.format(sorted(missing)))
        self.params = OrderedDict(
            (name, tensor(params[name])) for name in self.param_names()
        )
        hidden = self.hidden_size
        for gate in self.GATES:
            if (self.params['U_' + gate].shape != (hidden, hidden)
                    or self.params['W_' + gate].shape[1] != hidden
                    or self.params['b_' + gate].shape != (hidden,)):
                raise ValueError('inconsistent hidden size in gate {!r}'.format(gate))
        if (self.params['W_out'].shape[0] != hidden
                or self.params['b_out'].shape != (self.output_size,)):
            raise ValueError('inconsistent output layer shapes')

    def __eq__(self, other):
        return (isinstance(other, type(self)) and all(
            np.array_equal(value, other.params[name])
            for name, value in self.params.items()
        ))

    def __repr__(self):
        return '{}(input_size={}, hidden_size={}, output_size={})'.format(
            self.__class__.__name__,
            self.input_size,
            self.hidden_size,
            self.output_size,
        )

    @classmethod
    def param_names(cls):
        names = []
        for gate in cls.GATES:
            names.extend(part + gate for part in ('W_', 'U_', 'b_'))
        return tuple(names) + cls.OUTPUT_PARAMS

    @property
    def input_size(self):
        return self.params['W_' + self.GATES[0]].shape[0]

    @property
    def hidden_size(self):
        return self.params['U_' + self.GATES[0]].shape[0]

    @property
    def output_size(self):
        return self.params['W_out'].shape[1]

    @classmethod
    def initialise(cls, input_size, hidden_size, output_size, rng):
        """Create a model with uniform ``[-1/sqrt(H), 1/sqrt(H)]`` weights.

        Arguments:
          input_size (:py:class:`int`): ``D_in``.
          hidden_size (:py:class:`int`): ``H``.
          output_size (:py:class:`int`): ``M``.
          rng (:py:class:`numpy.random.Generator`): The weight source.

        Returns:
          :py:class:`BaseModel`: The model instance.

        """
        bound = 1.0 / np.sqrt(hidden_size)
        params = {}
        for gate in cls.GATES:
            params['W_' + gate] = rng.uniform(-bound, bound, (input_size, hidden_size))
            params['U_' + gate] = rng.uniform(-bound, bound, (hidden_size, hidden_size))
            params['b_' + gate] = np.zeros(hidden_size)
        params['W_out'] = rng.uniform(-bound, bound, (hidden_size, output_size))
        params['b_out'] = np.zeros(output_size)
        return cls(cls._adjust_initial(params))

    @staticmethod
    def _adjust_initial(params):
        return params

    @classmethod
    def from_arrays(cls, arrays):
        """Create the right model subclass for a parameter mapping.

        Arguments:
          arrays (:py:class:`dict`): Parameter name to array, e.g. as
            read from a checkpoint.

        Returns:
          :py:class:`BaseModel`: The model instance.

        """
        for subclass in BaseModel.__subclasses__():  # pylint: disable=no-member
            if set(subclass.param_names()) == set(arrays):
                return subclass(arrays)
        raise ValueError('no model matches parameters {!r}'.format(sorted(arrays)))

    def copy(self):
        return type(self)({name: value.copy() for name, value in self.params.items()})

    def bind(self, graph):
        """Add every parameter to ``graph`` as a leaf.

        Returns:
          :py:class:`collections.OrderedDict`: Parameter name to node id.

        """
        return OrderedDict(
            (name, graph.leaf(value)) for name, value in self.params.items()
        )

    def initial_state(self, graph, rows):
        """Zero initial state leaves for the tape path."""
        raise NotImplementedError

    def step(self, graph, x_t, state, mask, weights, p=0.0):
        """Advance the tape by one time step.

        Returns:
          :py:class:`tuple`: The new state; its first element is ``h_t``.

        """
        raise NotImplementedError

    def _array_state(self, shape):
        raise NotImplementedError

    def _array_step(self, x_t, dropped, state):
        raise NotImplementedError

    def predict(self, inputs, bits=None, scale=1.0, input_mask=None,
                input_scale=1.0):
        """Evaluate predictions for one mask or a stack of masks.

        Arguments:
          inputs (:py:class:`numpy.ndarray`): Shape ``[T, B, D_in]``.
          bits (:py:class:`numpy.ndarray`, optional): A mask ``[H]`` or a
            stack of masks ``[S, H]`` (defaults to all ones).
          scale (:py:class:`float`, optional): Multiplier applied with
            the mask (``1 / (1 - p)`` for inverted dropout).
          input_mask (:py:class:`numpy.ndarray`, optional): A ``[D_in]``
            mask applied to every input step.
          input_scale (:py:class:`float`, optional): Its multiplier.

        Returns:
          :py:class:`numpy.ndarray`: ``[T, B, M]`` for a single mask or
          ``[S, T, B, M]`` for a stack.

        """
        if bits is None:
            bits = np.ones(self.hidden_size)
        bits = np.asarray(bits, dtype=np.float64)
        stack = np.atleast_2d(bits)
        if stack.shape[1] != self.hidden_size:
            raise ValueError('mask size {!r} does not match hidden size {!r}'.format(
                stack.shape[1], self.hidden_size,
            ))
        inputs = np.asarray(inputs, dtype=np.float64)
        if input_mask is not None:
            inputs = (inputs * input_mask) * input_scale
        masks = stack[:, None, :]
        state = self._array_state((stack.shape[0], inputs.shape[1], self.hidden_size))
        outputs = []
        for x_t in inputs:
            dropped = state[0] * masks
            if scale != 1.0:
                dropped = dropped * scale
            state = self._array_step(x_t, dropped, state)
            logits = state[0] @ self.params['W_out'] + self.params['b_out']
            outputs.append(softmax(logits))
        predictions = np.stack(outputs, axis=1)
        return predictions[0] if bits.ndim == 1 else predictions

    def _array_affine(self, gate, x_t, dropped):
        return ((x_t @ self.params['W_' + gate] + dropped @ self.params['U_' + gate])
                + self.params['b_' + gate])


def drop(graph, h, mask, p=0.0):
    """``d(h, mask) = h * mask / (1 - p)`` on the tape.

    Arguments:
      graph (:py:class:`~.TapeGraph`): The tape.
      h (:py:class:`int`): A ``[B, H]`` node.
      mask (:py:class:`int`): A ``[H]`` node, shared across rows.
      p (:py:class:`float`, optional): The drop probability used for the
        inverted scaling (``0`` means no scaling).

    """
    scale = keep_scale(p)
    rows = graph.value(h).shape[0]
    dropped = graph.mul(h, graph.broadcast_row(mask, rows))
    return dropped if scale == 1.0 else graph.scale(dropped, scale)


class SimpleRnn(BaseModel):
    """Elman network, ``h_t = tanh(x_t W_h + d(h_{t-1}) U_h + b_h)``."""

    GATES = ('h',)

    KIND = 'rnn'

    def initial_state(self, graph, rows):
        return (graph.leaf(np.zeros((rows, self.hidden_size))),)

    def step(self, graph, x_t, state, mask, weights, p=0.0):
        return (rnn_step(graph, x_t, state[0], mask, weights, p),)

    def _array_state(self, shape):
        return (np.zeros(shape),)

    def _array_step(self, x_t, dropped, state):
        return (np.tanh(self._array_affine('h', x_t, dropped)),)


class Lstm(BaseModel):
    """LSTM whose four gates all read the same dropped ``h_{t-1}``."""

    GATES = ('i', 'f', 'c', 'o')

    KIND = 'lstm'

    @staticmethod
    def _adjust_initial(params):
        params['b_f'] = np.ones_like(params['b_f'])
        return params

    def initial_state(self, graph, rows):
        zeros = np.zeros((rows, self.hidden_size))
        return graph.leaf(zeros), graph.leaf(zeros)

    def step(self, graph, x_t, state, mask, weights, p=0.0):
        return lstm_step(graph, x_t, state[0], state[1], mask, weights, p)

    def _array_state(self, shape):
        return np.zeros(shape), np.zeros(shape)

    def _array_step(self, x_t, dropped, state):
        i = sigmoid(self._array_affine('i', x_t, dropped))
        f = sigmoid(self._array_affine('f', x_t, dropped))
        g = np.tanh(self._array_affine('c', x_t, dropped))
        o = sigmoid(self._array_affine('o', x_t, dropped))
        c = i * g + f * state[1]
        return o * np.tanh(c), c


def rnn_step(graph, x_t, h_prev, mask, weights, p=0.0):
    """One simple-RNN step with the dropped recurrent input.

    Arguments:
      graph (:py:class:`~.TapeGraph`): The tape.
      x_t (:py:class:`int`): ``[B, D_in]`` input node.
      h_prev (:py:class:`int`): ``[B, H]`` previous hidden state.
      mask (:py:class:`int`): ``[H]`` mask node.
      weights (:py:class:`dict`): Parameter name to node id.
      p (:py:class:`float`, optional): Drop probability for scaling.

    Returns:
      :py:class:`int`: The ``h_t`` node.

    """
    dropped = drop(graph, h_prev, mask, p)
    rows = graph.value(x_t).shape[0]
    pre = graph.add(
        graph.matmul(x_t, weights['W_h']),
        graph.matmul(dropped, weights['U_h']),
    )
    return graph.tanh(graph.add(pre, graph.broadcast_row(weights['b_h'], rows)))


def lstm_step(graph, x_t, h_prev, c_prev, mask, weights, p=0.0):
    """One LSTM step; ``d(h_prev)`` feeds all four gates.

    Returns:
      :py:class:`tuple`: The ``(h_t, c_t)`` nodes.

    """
    dropped = drop(graph, h_prev, mask, p)

    def affine(gate):
        rows = graph.value(x_t).shape[0]
        pre = graph.add(
            graph.matmul(x_t, weights['W_' + gate]),
            graph.matmul(dropped, weights['U_' + gate]),
        )
        return graph.add(pre, graph.broadcast_row(weights['b_' + gate], rows))

    i = graph.sigmoid(affine('i'))
    f = graph.sigmoid(affine('f'))
    g = graph.tanh(affine('c'))
    o = graph.sigmoid(affine('o'))
    c_t = graph.add(graph.mul(i, g), graph.mul(f, c_prev))
    return graph.mul(o, graph.tanh(c_t)), c_t


def forward_sequence(model, batch, mask, graph=None, weights=None,
                     relaxed=None, input_mask=None):
    """Unroll ``model`` over ``batch`` with one mask leaf for every step.

    Arguments:
      model (:py:class:`BaseModel`): The model.
      batch (:py:class:`SequenceBatch`): The input sequences.
      mask (:py:class:`~.DropoutMask`): The recurrent mask; its drop
        probability and scaling mode decide ``d(h, mask)``.
      graph (:py:class:`~.TapeGraph`, optional): Tape to record onto
        (a new one by default).
      weights (:py:class:`dict`, optional): Existing parameter leaves on
        ``graph`` (bound afresh by default).
      relaxed (:py:class:`numpy.ndarray`, optional): Real values for the
        mask leaf in place of ``mask.bits``.
      input_mask (:py:class:`~.DropoutMask`, optional): A mask over the
        input features, also shared by every step.

    Returns:
      :py:class:`ForwardTrace`: The recorded pass.

    """
    if batch.length < 1:
        raise ValueError('empty sequence')
    if len(mask) != model.hidden_size:
        raise ValueError('mask size {!r} does not match hidden size {!r}'.format(
            len(mask), model.hidden_size,
        ))
    if graph is None:
        graph = TapeGraph()
    if weights is None:
        weights = model.bind(graph)
    mask_node = graph.leaf(mask.bits if relaxed is None else relaxed)
    p = mask.effective_p
    rows = len(batch)
    input_node = None if input_mask is None else graph.leaf(input_mask.bits)
    state = model.initial_state(graph, rows)
    hidden, predictions = [], []
    for x_value in batch.inputs:
        x_t = graph.leaf(x_value)
        if input_node is not None:
            x_t = drop(graph, x_t, input_node, input_mask.effective_p)
        state = model.step(graph, x_t, state, mask_node, weights, p)
        logits = graph.add(
            graph.matmul(state[0], weights['W_out']),
            graph.broadcast_row(weights['b_out'], rows),
        )
        hidden.append(state[0])
        predictions.append(graph.softmax(logits))
    return ForwardTrace(graph, mask_node, weights, hidden, predictions)


def cross_entropy(trace, batch):
    """Mean negative log-likelihood of ``batch`` labels under ``trace``.

    Final-step tasks score ``p_T`` only; per-step tasks average every
    step.

    Returns:
      :py:class:`int`: The scalar loss node on ``trace.graph``.

    """
    graph = trace.graph
    classes = graph.value(trace.predictions[0]).shape[1]
    if batch.targets.size and batch.targets.max() >= classes:
        raise ValueError('label out of range for {} classes'.format(classes))
    eye = np.eye(classes)
    if batch.kind == 'final':
        steps = [(trace.predictions[-1], batch.targets)]
    else:
        steps = zip(trace.predictions, batch.targets.T)
    total = None
    count = 0
    for node, labels in steps:
        picked = graph.sum(graph.mul(graph.leaf(eye[labels]), graph.log(node)))
        total = picked if total is None else graph.add(total, picked)
        count += len(labels)
    return graph.scale(total, -1.0 / count)
