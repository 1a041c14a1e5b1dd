"""Minimal reverse-mode automatic differentiation over dense tensors.

Values are :py:class:`numpy.ndarray` objects of 64-bit floats. Every
operation is evaluated eagerly and appended to an explicit tape
(:py:class:`TapeGraph`); node identifiers are positions on that tape, so
parents always precede their children and insertion order is a valid
topological order.

Shape rules for each operation kind:

* ``matmul``: ``[a, b] x [b, c] -> [a, c]``.
* ``add``, ``sub``, ``mul``: both operands share one shape.
* ``scale``: any shape, multiplied by a Python constant.
* ``sigmoid``, ``tanh``, ``relu``, ``log``, ``square``: elementwise.
* ``softmax``: normalizes along the last axis.
* ``sum``, ``mean``: reduce everything to a scalar (shape ``()``).
* ``broadcast_row``: ``[n] -> [rows, n]`` by repeating the vector.

"""
import logging

import numpy as np

logger = logging.getLogger(__name__)

TINY = np.finfo(np.float64).tiny
""":py:class:`float`: Floor applied to ``log`` inputs."""


class ShapeError(ValueError):
    """Operand shapes do not conform to an operation's shape rule.

    Arguments:
      op (:py:class:`str`): The operation kind.
      shapes (:py:class:`tuple`): The offending operand shapes.

    """

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__('shape mismatch in {}: {}'.format(
            op, ' vs '.join(str(tuple(shape)) for shape in shapes),
        ))


class NumericalError(ArithmeticError):
    """A value or gradient is not finite.

    Arguments:
      name (:py:class:`str`): What was being evaluated.
      message (:py:class:`str`, optional): Extra detail.

    """

    def __init__(self, name, message='non-finite value'):
        self.name = name
        super().__init__('{}: {!r}'.format(message, name))


def tensor(values):
    """Coerce ``values`` to a finite float64 array.

    Raises:
      :py:class:`NumericalError`: If any value is NaN or infinite.

    """
    array = np.array(values, dtype=np.float64)
    if not np.all(np.isfinite(array)):
        raise NumericalError('tensor')
    return array


def softmax(x):
    """Softmax along the last axis, with max subtraction."""
    shifted = x - x.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def sigmoid(x):
    """Logistic function, evaluated through tanh."""
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


def _check_matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError('matmul', a.shape, b.shape)


def _check_row(x):
    if x.ndim != 1:
        raise ShapeError('broadcast_row', x.shape)


def _forward_matmul(values, _):
    a, b = values
    _check_matmul(a, b)
    return a @ b


def _forward_add(values, _):
    _same_shape('add', *values)
    return values[0] + values[1]


def _forward_sub(values, _):
    _same_shape('sub', *values)
    return values[0] - values[1]


def _forward_mul(values, _):
    _same_shape('mul', *values)
    return values[0] * values[1]


def _forward_broadcast_row(values, rows):
    _check_row(values[0])
    return np.tile(values[0], (rows, 1))


_FORWARD = dict(
    matmul=_forward_matmul,
    add=_forward_add,
    sub=_forward_sub,
    mul=_forward_mul,
    scale=lambda values, const: values[0] * const,
    sigmoid=lambda values, _: sigmoid(values[0]),
    tanh=lambda values, _: np.tanh(values[0]),
    relu=lambda values, _: np.maximum(values[0], 0.0),
    softmax=lambda values, _: softmax(values[0]),
    log=lambda values, _: np.log(np.maximum(values[0], TINY)),
    sum=lambda values, _: np.asarray(values[0].sum()),
    mean=lambda values, _: np.asarray(values[0].mean()),
    square=lambda values, _: values[0] ** 2,
    broadcast_row=_forward_broadcast_row,
)

# Each rule maps (upstream grad, output value, parent values, constant) to
# one gradient contribution per parent.
_BACKWARD = dict(
    matmul=lambda g, y, xs, c: (g @ xs[1].T, xs[0].T @ g),
    add=lambda g, y, xs, c: (g, g),
    sub=lambda g, y, xs, c: (g, -g),
    mul=lambda g, y, xs, c: (g * xs[1], g * xs[0]),
    scale=lambda g, y, xs, c: (g * c,),
    sigmoid=lambda g, y, xs, c: (g * y * (1.0 - y),),
    tanh=lambda g, y, xs, c: (g * (1.0 - y ** 2),),
    relu=lambda g, y, xs, c: (g * (xs[0] > 0.0),),
    softmax=lambda g, y, xs, c: (
        y * (g - (g * y).sum(axis=-1, keepdims=True)),
    ),
    log=lambda g, y, xs, c: (g / np.maximum(xs[0], TINY),),
    sum=lambda g, y, xs, c: (np.full_like(xs[0], g),),
    mean=lambda g, y, xs, c: (np.full_like(xs[0], g / xs[0].size),),
    square=lambda g, y, xs, c: (2.0 * xs[0] * g,),
    broadcast_row=lambda g, y, xs, c: (g.sum(axis=0),),
)

KINDS = tuple(sorted(_FORWARD))
""":py:class:`tuple`: The registered operation kinds."""


class Node:
    """One entry on the tape."""

    __slots__ = ('kind', 'parents', 'value', 'grad', 'const')

    def __init__(self, kind, parents, value, const=None):
        self.kind = kind
        self.parents = parents
        self.value = value
        self.grad = np.zeros_like(value)
        self.const = const

    def __repr__(self):
        return 'Node(kind={!r}, parents={!r}, shape={!r})'.format(
            self.kind, self.parents, self.value.shape,
        )


class TapeGraph:
    """Eagerly evaluated computation graph with reverse-mode gradients.

    Gradients start at zero and accumulate across :py:meth:`backward`
    calls; call :py:meth:`zero_grad` between passes.

    Attributes:
      nodes (:py:class:`list`): The :py:class:`Node` tape, in
        insertion (topological) order.

    """

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, values):
        """Add a leaf node holding ``values``.

        Returns:
          :py:class:`int`: The node id.

        """
        self.nodes.append(Node('leaf', (), tensor(values)))
        return len(self.nodes) - 1

    def apply(self, kind, *parents, const=None):
        """Append an operation of ``kind`` applied to ``parents``.

        Arguments:
          kind (:py:class:`str`): One of :py:data:`KINDS`.
          *parents (:py:class:`int`): The operand node ids.
          const (optional): The constant for ``scale`` (a multiplier)
            and ``broadcast_row`` (a row count).

        Returns:
          :py:class:`int`: The new node id.

        Raises:
          :py:class:`ShapeError`: If the operands don't conform.

        """
        try:
            forward = _FORWARD[kind]
        except KeyError:
            raise ValueError('unknown operation: {!r}'.format(kind))
        for parent in parents:
            if not 0 <= parent < len(self.nodes):
                raise ValueError('unknown node: {!r}'.format(parent))
        value = forward([self.nodes[parent].value for parent in parents], const)
        self.nodes.append(Node(kind, tuple(parents), value, const))
        return len(self.nodes) - 1

    def value(self, node):
        return self.nodes[node].value

    def grad(self, node):
        return self.nodes[node].grad

    def zero_grad(self):
        """Reset every gradient to zero."""
        for node in self.nodes:
            node.grad = np.zeros_like(node.value)

    def backward(self, root):
        """Accumulate ``d root / d node`` into every node's gradient.

        Arguments:
          root (:py:class:`int`): A scalar-valued node id.

        Raises:
          :py:class:`ShapeError`: If ``root`` isn't scalar.

        """
        nodes = self.nodes
        if nodes[root].value.size != 1:
            raise ShapeError('backward', nodes[root].value.shape)
        # This pass's gradients; stored ones are only added to.
        pending = {root: np.ones_like(nodes[root].value)}
        for index in range(root, -1, -1):
            upstream = pending.pop(index, None)
            if upstream is None:
                continue
            node = nodes[index]
            node.grad = node.grad + upstream
            if not node.parents or not upstream.any():
                continue
            parent_values = [nodes[parent].value for parent in node.parents]
            contributions = _BACKWARD[node.kind](
                upstream, node.value, parent_values, node.const,
            )
            for parent, contribution in zip(node.parents, contributions):
                if parent in pending:
                    pending[parent] = pending[parent] + contribution
                else:
                    pending[parent] = contribution

    # Named shortcuts for :py:meth:`apply`.

    def matmul(self, a, b):
        return self.apply('matmul', a, b)

    def add(self, a, b):
        return self.apply('add', a, b)

    def sub(self, a, b):
        return self.apply('sub', a, b)

    def mul(self, a, b):
        return self.apply('mul', a, b)

    def scale(self, x, const):
        return self.apply('scale', x, const=float(const))

    def sigmoid(self, x):
        return self.apply('sigmoid', x)

    def tanh(self, x):
        return self.apply('tanh', x)

    def relu(self, x):
        return self.apply('relu', x)

    def softmax(self, x):
        return self.apply('softmax', x)

    def log(self, x):
        return self.apply('log', x)

    def sum(self, x):
        return self.apply('sum', x)

    def mean(self, x):
        return self.apply('mean', x)

    def square(self, x):
        return self.apply('square', x)

    def broadcast_row(self, x, rows):
        return self.apply('broadcast_row', x, const=int(rows))


def finite_diff_check(function, x, h=1e-5):
    """Compare reverse-mode gradients against central differences.

    Arguments:
      function (:py:class:`collections.abc.Callable`): Called as
        ``function(graph, leaf)``; builds a scalar on ``graph`` from the
        ``leaf`` node and returns its node id.
      x (:py:class:`numpy.ndarray`): The evaluation point.
      h (:py:class:`float`, optional): The difference step.

    Returns:
      :py:class:`float`: ``max_i |analytic_i - numeric_i| / max(1, |numeric_i|)``.

    Raises:
      :py:class:`NumericalError`: If ``function`` is not finite at some
        evaluation point.

    """
    if h <= 0:
        raise ValueError('step must be positive: {!r}'.format(h))
    x = tensor(x)
    graph = TapeGraph()
    leaf = graph.leaf(x)
    graph.backward(function(graph, leaf))
    analytic = graph.grad(leaf)

    def evaluate(point):
        scratch = TapeGraph()
        value = float(scratch.value(function(scratch, scratch.leaf(point))))
        if not np.isfinite(value):
            raise NumericalError('f({!r})'.format(point.tolist()))
        return value

    worst = 0.0
    for index in np.ndindex(x.shape):
        step = np.zeros_like(x)
        step[index] = h
        numeric = (evaluate(x + step) - evaluate(x - step)) / (2.0 * h)
        error = abs(analytic[index] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, error)
    logger.debug('finite difference check over %d coordinates: %.3g',
                 x.size, worst)
    return worst
