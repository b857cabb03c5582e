"""Reverse-mode differentiation over a recorded tape of array operations.

Parameters live in a flat :class:`ParameterStore`. A *program* is any callable
``program(tape, inputs) -> Var`` that pulls parameters off the tape and
combines them with the primitives defined here. :func:`record_forward` runs a
program once, keeping every intermediate value; :func:`backward` then sweeps
the tape in reverse and returns a :class:`Gradient` laid out like the store.

The helper functions :func:`exp`, :func:`relu`, :func:`dot`, :func:`affine`,
... accept either plain ``numpy`` arrays or :class:`Var` objects, so the same
model code serves fast numeric evaluation and differentiation.
"""
from __future__ import annotations

import numpy as np

from .exceptions import NumericError, StructuralError


class ParameterStore:
    """Flat float64 vector of trainable scalars split into named groups.

    Each group owns a contiguous slice and a shape. Frozen scalars receive a
    zero gradient and are never touched by :func:`sgd_step`.
    """

    def __init__(self):
        self.values = np.zeros(0)
        self.frozen = np.zeros(0, dtype=bool)
        self._groups = {}
        self.layout_version = 0

    def add(self, name, value, frozen=False):
        if name in self._groups:
            raise StructuralError(f"duplicate parameter group {name!r}")
        value = np.array(value, dtype=np.float64)
        start = self.values.size
        self.values = np.concatenate([self.values, value.ravel()])
        self.frozen = np.concatenate([self.frozen, np.full(value.size, bool(frozen))])
        self._groups[name] = (start, start + value.size, value.shape)
        self.layout_version += 1
        return slice(start, start + value.size)

    def slice_of(self, name):
        try:
            start, stop, _ = self._groups[name]
        except KeyError:
            raise StructuralError(f"unknown parameter group {name!r}") from None
        return slice(start, stop)

    def shape_of(self, name):
        self.slice_of(name)
        return self._groups[name][2]

    def __getitem__(self, name):
        return self.values[self.slice_of(name)].reshape(self.shape_of(name))

    def __setitem__(self, name, value):
        sl = self.slice_of(name)
        self.values[sl] = np.asarray(value, dtype=np.float64).ravel()

    def __contains__(self, name):
        return name in self._groups

    def __len__(self):
        return self.values.size

    @property
    def groups(self):
        return list(self._groups)

    def freeze(self, name, flag=True):
        self.frozen[self.slice_of(name)] = flag

    def is_frozen(self, name):
        return bool(self.frozen[self.slice_of(name)].all())

    def copy(self):
        other = ParameterStore()
        other.values = self.values.copy()
        other.frozen = self.frozen.copy()
        other._groups = dict(self._groups)
        other.layout_version = self.layout_version
        return other


class Gradient:
    """Gradient vector with the same layout as the store it came from."""

    def __init__(self, values, store):
        self.values = values
        self._store = store

    def __getitem__(self, name):
        return self.values[self._store.slice_of(name)].reshape(self._store.shape_of(name))

    def __len__(self):
        return self.values.size


class _Node:
    __slots__ = ("op", "parents", "value", "fwd", "vjp", "slices")

    def __init__(self, op, parents, value, fwd, vjp, slices=None):
        self.op = op
        self.parents = parents
        self.value = value
        self.fwd = fwd
        self.vjp = vjp
        self.slices = slices


class Tape:
    """Ordered record of primitive operations; node i only reads nodes < i."""

    def __init__(self, params):
        self.params = params
        self.nodes = []
        self._layout = (id(params), params.layout_version, len(params))

    def _push(self, op, parents, value, fwd, vjp, slices=None):
        value = np.asarray(value, dtype=np.float64)
        if not np.isfinite(value).all():
            raise NumericError(f"non-finite value at tape node {len(self.nodes)} ({op})")
        self.nodes.append(_Node(op, parents, value, fwd, vjp, slices))
        return Var(self, len(self.nodes) - 1)

    def param(self, name):
        sl = self.params.slice_of(name)
        shape = self.params.shape_of(name)
        store = self.params

        def fwd():
            return store.values[sl].reshape(shape).copy()

        return self._push("param", (), fwd(), fwd, None, slices=[(sl, shape)])

    def stack(self, names):
        """Leaf whose rows are the (equal-shaped) groups ``names``."""
        if not names:
            raise StructuralError("cannot stack an empty list of parameter groups")
        store = self.params
        entries = [(store.slice_of(n), store.shape_of(n)) for n in names]
        shapes = {shape for _, shape in entries}
        if len(shapes) != 1:
            raise StructuralError(f"stacked groups have different shapes: {sorted(shapes)}")
        first, last = entries[0][0], entries[-1][0]
        contiguous = all(a[0].stop == b[0].start for a, b in zip(entries, entries[1:]))
        shape = (len(entries),) + entries[0][1]
        if contiguous:
            block = slice(first.start, last.stop)
            entries = [(block, shape)]

            def fwd():
                return store.values[block].reshape(shape).copy()
        else:
            def fwd():
                return np.stack([store.values[sl].reshape(s) for sl, s in entries])

        return self._push("param", (), fwd(), fwd, None, slices=entries)

    def const(self, value):
        value = np.asarray(value, dtype=np.float64)
        return self._push("const", (), value, lambda: value, None)

    def reevaluate(self):
        """Recompute every node from the current store; returns the final value."""
        for i, node in enumerate(self.nodes):
            if node.parents:
                value = node.fwd(*(self.nodes[p].value for p in node.parents))
            else:
                value = node.fwd()
            value = np.asarray(value, dtype=np.float64)
            if not np.isfinite(value).all():
                raise NumericError(f"non-finite value at tape node {i} ({node.op})")
            node.value = value
        return self.nodes[-1].value

    def __len__(self):
        return len(self.nodes)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


class Var:
    """Handle to one tape node. Supports the arithmetic operators."""

    __slots__ = ("tape", "index")
    __array_priority__ = 100

    def __init__(self, tape, index):
        self.tape = tape
        self.index = index

    @property
    def value(self):
        return self.tape.nodes[self.index].value

    @property
    def shape(self):
        return self.value.shape

    def _lift(self, other):
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise StructuralError("operands recorded on different tapes")
            return other
        return self.tape.const(other)

    def _binary(self, op, other, fwd, vjp):
        other = self._lift(other)
        value = fwd(self.value, other.value)
        return self.tape._push(op, (self.index, other.index), value, fwd, vjp)

    def __add__(self, other):
        return self._binary(
            "add", other, np.add,
            lambda g, a, b, out: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        )

    def __radd__(self, other):
        return self._lift(other) + self

    def __sub__(self, other):
        return self._binary(
            "sub", other, np.subtract,
            lambda g, a, b, out: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        )

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        return self._binary(
            "mul", other, np.multiply,
            lambda g, a, b, out: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    def __rmul__(self, other):
        return self._lift(other) * self

    def __truediv__(self, other):
        return self._binary(
            "div", other, np.divide,
            lambda g, a, b, out: (
                _unbroadcast(g / b, a.shape),
                _unbroadcast(-g * a / (b * b), b.shape),
            ),
        )

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __neg__(self):
        return self.tape._push(
            "neg", (self.index,), -self.value, np.negative, lambda g, a, out: (-g,)
        )

    def __matmul__(self, other):
        return dot(self, other)

    def __getitem__(self, key):
        def fwd(a):
            return a[key]

        def vjp(g, a, out):
            z = np.zeros_like(a)
            np.add.at(z, key, g)
            return (z,)

        return self.tape._push("index", (self.index,), fwd(self.value), fwd, vjp)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]

        def fwd(a):
            return a.reshape(shape)

        return self.tape._push(
            "reshape", (self.index,), fwd(self.value), fwd,
            lambda g, a, out: (g.reshape(a.shape),),
        )

    def __repr__(self):
        return f"Var(node={self.index}, shape={self.shape})"


def _tape_of(*args):
    for a in args:
        if isinstance(a, Var):
            return a.tape
    return None


def _as_var(tape, x):
    return x if isinstance(x, Var) else tape.const(x)


def exp(x):
    if not isinstance(x, Var):
        return np.exp(x)
    return x.tape._push("exp", (x.index,), np.exp(x.value), np.exp, lambda g, a, out: (g * out,))


def relu(x):
    if not isinstance(x, Var):
        return np.maximum(x, 0.0)
    return x.tape._push(
        "relu", (x.index,), np.maximum(x.value, 0.0), lambda a: np.maximum(a, 0.0),
        lambda g, a, out: (g * (a > 0),),
    )


def _dot_vjp(g, a, b, out):
    if a.ndim == 1 and b.ndim == 1:
        return g * b, g * a
    if b.ndim == 1:
        return np.outer(g, b), a.T @ g
    if a.ndim == 1:
        return b @ g, np.outer(a, g)
    return g @ b.T, a.T @ g


def dot(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return np.dot(a, b)
    a, b = _as_var(tape, a), _as_var(tape, b)
    return tape._push("dot", (a.index, b.index), np.dot(a.value, b.value), np.dot, _dot_vjp)


def _affine_fwd(x, w, b):
    return x @ w.T + b


def _affine_vjp(g, x, w, b, out):
    return g @ w, g.T @ x, g.sum(axis=0)


def affine(x, w, b):
    """``x @ w.T + b`` for a batch ``x`` (n, d), weights (k, d), bias (k,)."""
    tape = _tape_of(x, w, b)
    if tape is None:
        return _affine_fwd(x, w, b)
    x, w, b = (_as_var(tape, v) for v in (x, w, b))
    return tape._push(
        "affine", (x.index, w.index, b.index), _affine_fwd(x.value, w.value, b.value),
        _affine_fwd, _affine_vjp,
    )


def sum_(x, axis=None):
    if not isinstance(x, Var):
        return np.sum(x, axis=axis)

    def vjp(g, a, out):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return x.tape._push("sum", (x.index,), np.sum(x.value, axis=axis),
                        lambda a: np.sum(a, axis=axis), vjp)


def mean(x):
    if not isinstance(x, Var):
        return np.mean(x)
    n = x.value.size
    return x.tape._push(
        "mean", (x.index,), np.mean(x.value), np.mean,
        lambda g, a, out: (np.full(a.shape, g / n),),
    )


def concat(items, axis=0):
    tape = _tape_of(*items)
    if tape is None:
        return np.concatenate(items, axis=axis)
    items = [_as_var(tape, v) for v in items]
    sizes = np.cumsum([v.value.shape[axis] for v in items])[:-1]

    def fwd(*arrays):
        return np.concatenate(arrays, axis=axis)

    def vjp(g, *args):
        return tuple(np.split(g, sizes, axis=axis))

    return tape._push("concat", tuple(v.index for v in items),
                      fwd(*(v.value for v in items)), fwd, vjp)


def squared_error(pred, target):
    """Mean over all entries of ``(pred - target)**2``; ``target`` is data."""
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise StructuralError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if not isinstance(pred, Var):
        r = pred - target
        return np.mean(r * r)
    n = target.size

    def fwd(p):
        r = p - target
        return np.mean(r * r)

    return pred.tape._push(
        "squared_error", (pred.index,), fwd(pred.value), fwd,
        lambda g, p, out: (g * 2.0 * (p - target) / n,),
    )


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.intp)
    rows = np.arange(labels.size)

    def fwd(z):
        return -np.mean(_log_softmax(z)[rows, labels])

    if not isinstance(logits, Var):
        return fwd(np.asarray(logits, dtype=np.float64))

    def vjp(g, z, out):
        p = np.exp(_log_softmax(z))
        p[rows, labels] -= 1.0
        return (g * p / labels.size,)

    return logits.tape._push("softmax_xent", (logits.index,), fwd(logits.value), fwd, vjp)


def record_forward(program, params, inputs):
    """Evaluate ``program(tape, inputs)``; returns ``(tape, loss)``."""
    tape = Tape(params)
    out = program(tape, inputs)
    if not isinstance(out, Var):
        raise StructuralError("program must return a tape variable")
    if out.index != len(tape.nodes) - 1:
        # keep the loss as the final node
        out = out.reshape(out.shape)
    if out.value.size != 1:
        raise StructuralError(f"program returned shape {out.shape}, expected a scalar")
    return tape, float(out.value)


def backward(tape, params):
    """Gradient of the tape's final node with respect to every store scalar."""
    if tape.params is not params or tape._layout != (
        id(params), params.layout_version, len(params)
    ):
        raise StructuralError("tape was recorded against a different parameter layout")
    nodes = tape.nodes
    if not nodes or nodes[-1].value.size != 1:
        raise StructuralError("tape does not end in a scalar")
    grad = np.zeros(len(params))
    adj = [None] * len(nodes)
    adj[-1] = np.ones_like(nodes[-1].value)
    for i in range(len(nodes) - 1, -1, -1):
        g = adj[i]
        if g is None:
            continue
        node = nodes[i]
        if node.op == "param":
            if len(node.slices) == 1:
                sl, _ = node.slices[0]
                grad[sl] += g.ravel()
            else:
                for row, (sl, _) in zip(g, node.slices):
                    grad[sl] += row.ravel()
            continue
        if node.vjp is None:
            continue
        parent_values = [nodes[p].value for p in node.parents]
        for p, gp in zip(node.parents, node.vjp(g, *parent_values, node.value)):
            adj[p] = gp if adj[p] is None else adj[p] + gp
    grad[params.frozen] = 0.0
    return Gradient(grad, params)


def value_and_grad(program, params, inputs):
    tape, loss = record_forward(program, params, inputs)
    return loss, backward(tape, params)


def sgd_step(params, grad, learning_rate):
    """In-place plain gradient step on the unfrozen scalars; returns ``params``."""
    if not learning_rate > 0:
        raise ValueError(f"learning_rate must be positive, got {learning_rate}")
    g = grad.values if isinstance(grad, Gradient) else np.asarray(grad)
    if g.shape != params.values.shape:
        raise StructuralError("gradient length does not match the parameter store")
    if not np.isfinite(g).all():
        bad = int(np.flatnonzero(~np.isfinite(g))[0])
        raise NumericError(f"non-finite gradient entry at index {bad}")
    live = ~params.frozen
    params.values[live] -= learning_rate * g[live]
    return params
