"""Tape-based reverse-mode differentiation over float64 numpy arrays."""

from __future__ import annotations

from typing import Callable, Iterator, Sequence

import numpy as np


class AutodiffStateError(RuntimeError):
    """Raised when backward is requested on a node without a recorded forward pass."""


class ShapeError(ValueError):
    pass


class Tensor:
    """A float64 array plus the bookkeeping needed to backpropagate into it.

    Leaves created with ``requires_grad=True`` accumulate gradients in
    ``.grad``; interior nodes keep a closure mapping their output gradient to
    their parents' gradients. The graph is released after ``backward``.
    """

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __len__(self) -> int:
        return len(self.value)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.value

    def zero_grad(self) -> None:
        self.grad = None

    # arithmetic sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def backward(self, grad=None) -> None:
        """Backpropagate from this node into every reachable leaf.

        ``grad`` defaults to 1 for scalar outputs.
        """
        if self._backward is None:
            if self._consumed:
                raise AutodiffStateError("graph already released by a previous backward()")
            raise AutodiffStateError("backward() needs a node produced by a recorded forward pass")
        if grad is None:
            if self.value.size != 1:
                raise AutodiffStateError(f"implicit gradient needs a scalar output, got shape {self.shape}")
            grad = np.ones_like(self.value)
        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
        for node in order:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node._consumed = True


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def matmul(a, b) -> Tensor:
    """Matrix product for 1-D/2-D operands (batched left operand allowed)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        av, bv = a.value, b.value
        if bv.ndim == 1:
            ga = np.multiply.outer(g, bv)
            gb = np.tensordot(av, g, axes=(tuple(range(av.ndim - 1)), tuple(range(g.ndim))))
        else:
            ga = g @ bv.T
            if av.ndim == 1:
                gb = np.outer(av, g)
            else:
                gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _node(a.value @ b.value, (a, b), backward)


def _stable_sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _stable_sigmoid(x.value)
    return _node(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.value)
    return _node(t, (x,), lambda g: (g * (1.0 - t * t),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.value > 0
    return _node(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def identity(x) -> Tensor:
    return as_tensor(x)


def square(x) -> Tensor:
    x = as_tensor(x)
    return _node(x.value * x.value, (x,), lambda g: (2.0 * g * x.value,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _node(np.log(x.value), (x,), lambda g: (g / x.value,))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where the input was inside ``[lo, hi]``."""
    x = as_tensor(x)
    inside = (x.value >= lo) & (x.value <= hi)
    return _node(np.clip(x.value, lo, hi), (x,), lambda g: (g * inside,))


def sum(x, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _node(x.value.sum(axis=axis), (x,), backward)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.value.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _node(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def getitem(x, index) -> Tensor:
    x = as_tensor(x)

    fancy = _needs_add_at(index)

    def backward(g):
        out = np.zeros_like(x.value)
        if fancy:
            np.add.at(out, index, g)
        else:
            out[index] = g
        return (out,)

    return _node(x.value[index], (x,), backward)


def _needs_add_at(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([t.value for t in ts], axis=axis), ts, backward)


def iter_leaves(root: Tensor) -> Iterator[Tensor]:
    for node in _topological(root):
        if node._backward is None:
            yield node
