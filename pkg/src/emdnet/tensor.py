"""Dense tensors with tape-based reverse-mode differentiation.

Operations are recorded on the innermost active :class:`Tape` whenever at
least one input requires a gradient::

    with Tape() as tape:
        loss = ((x * x).sum())
    grads = backward(loss, tape)
    grads[x]            # == 2 * x.data

Tensor values are plain numpy arrays.  Training runs in float32; gradient
checks build the same graphs in float64.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

DEFAULT_DTYPE = np.float32

_active: list["Tape"] = []


class Tensor:
    """An N-dimensional array plus its (optional) position on a tape."""

    __slots__ = ("data", "requires_grad", "tape", "node", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind in "biu":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.tape: Tape | None = None
        self.node: int | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad})"

    def __len__(self):
        return len(self.data)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self):
        return sum_all(self)

    def abs(self):
        return absolute(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Append-only record of differentiable operations.

    Node ``k`` only references tensors produced by nodes ``< k`` (or leaves),
    so reverse append order is a valid topological order.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, op, inputs, output, backward_fn):
        output.tape = self
        output.node = len(self.nodes)
        self.nodes.append(Node(op, tuple(inputs), output, backward_fn))
        return output


def active_tape() -> Tape | None:
    return _active[-1] if _active else None


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def make_op(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward_fn) -> Tensor:
    """Wrap ``out_data`` and record it on the active tape when needed."""
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    tape = active_tape()
    if needs and tape is not None:
        tape.record(op, inputs, out, backward_fn)
    return out


class Gradients(dict):
    """Gradient arrays keyed by tensor identity.

    Looking up a tensor the loss does not depend on yields zeros of the
    right shape instead of a ``KeyError``.
    """

    def __init__(self, by_id: dict, tensors: dict):
        super().__init__()
        self._by_id = by_id
        self._tensors = tensors

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._by_id.get(id(t))
        if g is None:
            return np.zeros_like(t.data)
        return g

    def __contains__(self, t) -> bool:
        return id(t) in self._by_id

    def get(self, t, default=None):
        g = self._by_id.get(id(t))
        return default if g is None else g

    def __len__(self):
        return len(self._by_id)

    def __iter__(self):
        return (self._tensors[k] for k in self._by_id)

    def items(self):
        return ((self._tensors[k], g) for k, g in self._by_id.items())


def backward(loss: Tensor, tape: Tape | None = None) -> Gradients:
    """Reverse-mode sweep from a scalar ``loss``.

    Returns gradients for every tensor reachable from ``loss`` that requires
    one (leaves and intermediates alike).
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape is None:
        tape = loss.tape
    if loss.node is None or loss.tape is not tape:
        raise ValueError("loss was not recorded on the given tape")

    grads = {id(loss): np.ones_like(loss.data)}
    tensors = {id(loss): loss}
    for k in range(loss.node, -1, -1):
        node = tape.nodes[k]
        g_out = grads.get(id(node.output))
        if g_out is None:
            continue
        in_grads = node.backward(g_out)
        for t, g in zip(node.inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
                tensors[key] = t
    return Gradients(grads, tensors)


def check_finite(t, what: str = "tensor") -> None:
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    if not np.all(np.isfinite(data)):
        bad = int(np.size(data) - np.count_nonzero(np.isfinite(data)))
        raise NumericError(f"{what} contains {bad} non-finite value(s)")


# elementwise / reduction primitives -----------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _operands(a, b):
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype if not isinstance(b, Tensor) else None)
    return a, b


def add(a, b) -> Tensor:
    a, b = _operands(a, b)
    sa, sb = a.shape, b.shape
    return make_op("add", (a, b), a.data + b.data,
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _operands(a, b)
    sa, sb = a.shape, b.shape
    return make_op("sub", (a, b), a.data - b.data,
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _operands(a, b)
    ad, bd = a.data, b.data
    return make_op("mul", (a, b), ad * bd,
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def power(a: Tensor, exponent: float) -> Tensor:
    ad = a.data
    return make_op("pow", (a,), ad ** exponent,
                   lambda g: (g * exponent * ad ** (exponent - 1),))


def absolute(a: Tensor) -> Tensor:
    """|a| with subgradient 0 at a == 0."""
    ad = a.data
    return make_op("abs", (a,), np.abs(ad), lambda g: (g * np.sign(ad),))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return make_op("sum", (a,), np.asarray(a.data.sum(), dtype=a.dtype),
                   lambda g: (np.broadcast_to(g, shape).copy(),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return make_op("reshape", (a,), a.data.reshape(shape), lambda g: (g.reshape(old),))
