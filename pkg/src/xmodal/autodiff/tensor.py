from __future__ import annotations

import contextlib

import numpy as np

from ..errors import DivergenceError

_state = {"dtype": np.float32, "grad": True, "check_finite": False}


def default_dtype():
    return _state["dtype"]


@contextlib.contextmanager
def float64_mode():
    """Compute in float64 (gradient checking)."""
    prev = _state["dtype"]
    _state["dtype"] = np.float64
    try:
        yield
    finally:
        _state["dtype"] = prev


@contextlib.contextmanager
def no_grad():
    """Build no graph: ops return leaf tensors."""
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


@contextlib.contextmanager
def check_finite():
    """Raise on any non-finite op output (training mode)."""
    prev = _state["check_finite"]
    _state["check_finite"] = True
    try:
        yield
    finally:
        _state["check_finite"] = prev


class Tensor:
    """A numpy array plus the bookkeeping for reverse-mode differentiation.

    ``parents`` and ``backward_fn`` are set by ops; ``backward_fn`` maps the
    upstream gradient to a tuple of gradients, one per parent.
    """

    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad", "op")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _state["dtype"])
        self.grad = None
        self.parents = ()
        self.backward_fn = None
        self.requires_grad = requires_grad
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op})"


class Parameter(Tensor):
    __slots__ = ("name", "trainable")

    def __init__(self, data, name, trainable=True, dtype=None):
        super().__init__(data, requires_grad=trainable, dtype=dtype)
        self.name = name
        self.trainable = trainable


def make_node(data, parents, backward_fn, op):
    out = Tensor(data, dtype=data.dtype)
    if _state["check_finite"] and not np.all(np.isfinite(out.data)):
        raise DivergenceError(f"non-finite values produced by {op}")
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
        out.requires_grad = True
        out.op = op
    return out


def topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, grad=None):
    """Accumulate d(loss)/d(node) into ``.grad`` of every reachable tensor.

    Returns the visit order (reverse topological)."""
    if grad is None:
        if loss.data.size != 1:
            raise ValueError("backward() without an explicit gradient needs a scalar")
        grad = np.ones_like(loss.data)
    order = topological_order(loss)
    grads = {id(loss): np.asarray(grad, dtype=loss.data.dtype)}
    visited = []
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        visited.append(node)
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return visited
