"""Minimal define-by-run reverse-mode automatic differentiation.

Values are plain read-only numpy arrays.  A :class:`Node` records the value
produced by an operation, the nodes it was computed from and a closure that
maps the output gradient to one gradient per parent.  Trainable leaves are
:class:`Param` nodes identified by a unique name; :func:`backward` returns a
``{name: gradient}`` mapping.

Gradients are accumulated in a dictionary local to each :func:`backward`
call, so the same graph can be differentiated several times with respect to
different losses (the multimodal and unimodal objectives share encoders).

No implicit broadcasting is performed except between a tensor and a
single-element operand.  Use :func:`broadcast_rows` to expand a bias row.
"""

import math
import os

import numpy as np

from .errors import (
    CycleDetected,
    DomainError,
    KanMcpError,
    NonDeterministicGraph,
    NonFiniteInput,
    NonScalarLoss,
    ShapeMismatch,
)

DTYPE = np.float32 if os.environ.get("KANMCP_FLOAT32") else np.float64


def tensor(shape, data, allow_nonfinite=False):
    """Build an immutable tensor value from a shape and row-major data."""
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ShapeMismatch(f"shape entries must be positive, got {shape}")
    arr = np.array(data, dtype=DTYPE).ravel()
    if arr.size != math.prod(shape):
        raise ShapeMismatch(f"shape {shape} needs {math.prod(shape)} values, got {arr.size}")
    if not allow_nonfinite and not np.all(np.isfinite(arr)):
        raise NonFiniteInput("tensor data contains NaN or Inf")
    arr = arr.reshape(shape)
    arr.flags.writeable = False
    return arr


def as_array(x):
    arr = np.array(x, dtype=DTYPE)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput("tensor data contains NaN or Inf")
    return arr


class Node:
    __slots__ = ("data", "parents", "backward_fn", "op")

    def __init__(self, data, parents=(), backward_fn=None, op="const"):
        self.data = data
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    @property
    def value(self):
        v = self.data.view()
        v.flags.writeable = False
        return v

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"{type(self).__name__}(op={self.op!r}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)


class Param(Node):
    """Trainable leaf.  ``data`` is replaced (never mutated) between steps."""

    __slots__ = ("name",)

    def __init__(self, name, data):
        super().__init__(as_array(data), (), None, "param")
        self.name = name

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.shape})"


def constant(x):
    if isinstance(x, Node):
        return x
    return Node(as_array(x))


def _node(x):
    return x if isinstance(x, Node) else constant(x)


def custom_op(data, parents, backward_fn, op):
    """Register a new graph node; ``backward_fn(g)`` returns one grad per parent."""
    return Node(data, tuple(parents), backward_fn, op)


# ---------------------------------------------------------------- elementwise


def _is_scalar(shape):
    return len(shape) <= 1 and math.prod(shape) == 1


def _binary_shapes(a, b, op):
    if a.shape == b.shape:
        return None
    if _is_scalar(b.shape):
        return "b"
    if _is_scalar(a.shape):
        return "a"
    raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not conform")


def _unbroadcast(g, shape):
    return np.sum(g).reshape(shape)


def add(a, b):
    a, b = _node(a), _node(b)
    which = _binary_shapes(a, b, "add")

    def back(g):
        ga = _unbroadcast(g, a.shape) if which == "a" else g
        gb = _unbroadcast(g, b.shape) if which == "b" else g
        return ga, gb

    return custom_op(a.data + b.data, (a, b), back, "add")


def sub(a, b):
    a, b = _node(a), _node(b)
    which = _binary_shapes(a, b, "sub")

    def back(g):
        ga = _unbroadcast(g, a.shape) if which == "a" else g
        gb = _unbroadcast(-g, b.shape) if which == "b" else -g
        return ga, gb

    return custom_op(a.data - b.data, (a, b), back, "sub")


def mul(a, b):
    a, b = _node(a), _node(b)
    which = _binary_shapes(a, b, "mul")

    def back(g):
        ga = g * b.data
        gb = g * a.data
        if which == "a":
            ga = _unbroadcast(ga, a.shape)
        elif which == "b":
            gb = _unbroadcast(gb, b.shape)
        return ga, gb

    return custom_op(a.data * b.data, (a, b), back, "mul")


def scalar_mul(a, c):
    a = _node(a)
    c = float(c)
    return custom_op(a.data * c, (a,), lambda g: (g * c,), "scalar_mul")


def abs(a):  # noqa: A001 - mirrors numpy naming
    a = _node(a)
    s = np.sign(a.data)
    return custom_op(np.abs(a.data), (a,), lambda g: (g * s,), "abs")


def exp(a):
    a = _node(a)
    out = np.exp(a.data)
    return custom_op(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = _node(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value")
    return custom_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a):
    a = _node(a)
    if np.any(a.data <= 0):
        raise DomainError("sqrt of non-positive value")
    out = np.sqrt(a.data)
    return custom_op(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def square(a):
    a = _node(a)
    return custom_op(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(a):
    a = _node(a)
    s = _sigmoid(a.data)
    out = a.data * s

    def back(g):
        return (g * (s + a.data * s * (1.0 - s)),)

    return custom_op(out, (a,), back, "silu")


def tanh(a):
    a = _node(a)
    out = np.tanh(a.data)
    return custom_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def clip(a, lo, hi):
    """Clamp to ``[lo, hi]``; gradient passes only where the input is inside."""
    a = _node(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return custom_op(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


# ---------------------------------------------------------------- structural


def matmul(a, b):
    a, b = _node(a), _node(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: shapes {a.shape} and {b.shape} do not conform")

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return custom_op(a.data @ b.data, (a, b), back, "matmul")


def concat(nodes, axis=0):
    nodes = [_node(n) for n in nodes]
    if not nodes:
        raise ShapeMismatch("concat of zero tensors")
    try:
        out = np.concatenate([n.data for n in nodes], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {exc}") from None
    bounds = np.cumsum([n.shape[axis] for n in nodes])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return custom_op(out, nodes, back, "concat")


def slice(a, index):  # noqa: A001
    """Basic (non-fancy) indexing; ``index`` is anything numpy accepts in ``x[index]``."""
    a = _node(a)
    out = a.data[index]

    def back(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return custom_op(np.array(out), (a,), back, "slice")


def reshape(a, shape):
    a = _node(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(f"reshape: {exc}") from None
    return custom_op(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a):
    a = _node(a)
    if a.data.ndim != 2:
        raise ShapeMismatch("transpose expects a matrix")
    return custom_op(a.data.T, (a,), lambda g: (g.T,), "transpose")


def broadcast_rows(a, n):
    """Explicitly repeat a length-d vector (or 1 x d row) into an n x d matrix."""
    a = _node(a)
    row = a.data.reshape(1, -1)
    return custom_op(
        np.repeat(row, n, axis=0), (a,), lambda g: (g.sum(axis=0).reshape(a.shape),), "broadcast_rows"
    )


def sum(a, axis=None):  # noqa: A001
    a = _node(a)
    out = np.sum(a.data, axis=axis)

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return custom_op(np.asarray(out), (a,), back, "sum")


def mean(a, axis=None):
    a = _node(a)
    n = a.data.size if axis is None else a.shape[axis]
    out = np.mean(a.data, axis=axis)

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return custom_op(np.asarray(out), (a,), back, "mean")


# ---------------------------------------------------------------- backward


def _topo_order(root):
    order = []
    state = {}
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        key = id(node)
        if done:
            state[key] = 2
            order.append(node)
            continue
        s = state.get(key, 0)
        if s == 2:
            continue
        if s == 1:
            raise CycleDetected(f"cycle through {node!r}")
        state[key] = 1
        stack.append((node, True))
        for p in node.parents:
            ps = state.get(id(p), 0)
            if ps == 1:
                raise CycleDetected(f"cycle through {p!r}")
            if ps == 0:
                stack.append((p, False))
    return order


def backward(loss, wrt=None):
    """Gradient of a scalar ``loss`` with respect to every reachable :class:`Param`.

    Returns ``{param.name: ndarray}``.  If ``wrt`` is given, exactly those
    parameters are returned and unreachable ones get exact zeros.
    """
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    out = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Param):
            if node.name in out:
                raise KanMcpError(f"duplicate parameter name {node.name!r} in graph")
            out[node.name] = g
            continue
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            key = id(parent)
            prev = grads.get(key)
            grads[key] = pg if prev is None else prev + pg
    if wrt is not None:
        return {p.name: out.get(p.name, np.zeros_like(p.data)) for p in wrt}
    return out


def grad_check(f, params, step=1e-5):
    """Max relative error between autodiff and central differences.

    ``f()`` must build a fresh scalar loss graph from the current ``params``
    data.  The error per entry is ``|ad - fd| / max(1, |fd|)``.
    """
    if not 0 < step <= 1e-2:
        raise ValueError("step must lie in (0, 1e-2]")
    base = f()
    again = f()
    if not np.array_equal(base.data, again.data):
        raise NonDeterministicGraph("two forward passes at the same point disagree")
    ad = backward(base, wrt=params)
    worst = 0.0
    for p in params:
        original = p.data
        flat = original.ravel()
        for i in range(flat.size):
            bumped = flat.copy()
            bumped[i] += step
            p.data = bumped.reshape(original.shape)
            up = float(f().data)
            bumped[i] = flat[i] - step
            p.data = bumped.reshape(original.shape)
            down = float(f().data)
            p.data = original
            fd = (up - down) / (2 * step)
            err = np.abs(ad[p.name].ravel()[i] - fd) / max(1.0, np.abs(fd))
            worst = max(worst, float(err))
    return worst
