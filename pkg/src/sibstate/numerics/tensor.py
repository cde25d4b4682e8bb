"""Dense float64 tensors with reverse-mode automatic differentiation.

The tape is the graph recorded on the tensors themselves: every operation
stores its parent tensors plus a closure that routes the output gradient back
to them. ``Tensor.backward`` replays that record once, in reverse topological
order, so each node's gradient is fully accumulated before it propagates.
Graph construction can be suspended with ``no_grad`` for inference paths.

All arithmetic is 64-bit and reduction orders are fixed, so identical inputs
give bit-identical forward values and gradients across runs.
"""

from __future__ import annotations

import contextlib
from typing import Callable

import numpy as np

from ..errors import NumericError, ShapeError

_GRAD_ENABLED = True
_CHECK_FINITE = False


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad():
    """Suspend tape recording inside the block; forward values are unchanged."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def set_finite_checks(enabled: bool) -> None:
    """Validation hook: when on, every op output is scanned for NaN/inf."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


class Tensor:
    """Shape-tagged dense array of 64-bit reals participating in autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data: np.ndarray = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            if g.flags.owndata and g.flags.writeable and g.dtype == np.float64:
                self.grad = g
            else:
                # g is a view into another tensor's buffer; take ownership
                self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def backward(self) -> None:
        """Backpropagate from a scalar output through the recorded graph.

        Non-leaf gradients and tape references are released afterwards so the
        activation memory of a training step can be reclaimed immediately.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar, got shape {self.shape}")
        topo = _toposort(self)
        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()
            if node._parents:
                # non-leaf: gradient fully consumed, release tape memory now
                node._parents = ()
                node._backward = None
                node.grad = None

    # ---- arithmetic -----------------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = make_op(np.add(self.data, other.data), (self, other))
        if out.requires_grad:

            def bw():
                if self.requires_grad:
                    self.accumulate_grad(_sum_to_shape(out.grad, self.data.shape))
                if other.requires_grad:
                    other.accumulate_grad(_sum_to_shape(out.grad, other.data.shape))

            out._backward = bw
        return out

    __radd__ = __add__

    def __neg__(self):
        out = make_op(-self.data, (self,))
        if out.requires_grad:

            def bw():
                self.accumulate_grad(-out.grad)

            out._backward = bw
        return out

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = make_op(np.subtract(self.data, other.data), (self, other))
        if out.requires_grad:

            def bw():
                if self.requires_grad:
                    self.accumulate_grad(_sum_to_shape(out.grad, self.data.shape))
                if other.requires_grad:
                    other.accumulate_grad(_sum_to_shape(-out.grad, other.data.shape))

            out._backward = bw
        return out

    def __rsub__(self, other):
        return Tensor(other) - self

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = make_op(np.multiply(self.data, other.data), (self, other))
        if out.requires_grad:

            def bw():
                if self.requires_grad:
                    self.accumulate_grad(_sum_to_shape(out.grad * other.data, self.data.shape))
                if other.requires_grad:
                    other.accumulate_grad(_sum_to_shape(out.grad * self.data, other.data.shape))

            out._backward = bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("tensor/tensor division is unsupported; multiply by a reciprocal")
        return self * (1.0 / float(scalar))

    def __getitem__(self, idx):
        out = make_op(self.data[idx], (self,))
        if out.requires_grad:

            def bw():
                g = np.zeros_like(self.data)
                np.add.at(g, idx, out.grad)
                self.accumulate_grad(g)

            out._backward = bw
        return out

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = make_op(self.data.reshape(shape), (self,))
        if out.requires_grad:

            def bw():
                self.accumulate_grad(out.grad.reshape(self.data.shape))

            out._backward = bw
        return out

    def sum(self):
        out = make_op(self.data.sum(), (self,))
        if out.requires_grad:

            def bw():
                self.accumulate_grad(np.broadcast_to(out.grad, self.data.shape))

            out._backward = bw
        return out

    def mean(self):
        return self.sum() / self.data.size


def _toposort(root: Tensor) -> list[Tensor]:
    # iterative DFS: unrolled-solver graphs can exceed the recursion limit
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return topo


def _sum_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the shape of its source operand."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def make_op(data: np.ndarray, parents: tuple[Tensor, ...]) -> Tensor:
    """Create an op result, marking it for recording when the tape is active.

    When recording applies, the caller must attach the backward closure to the
    returned tensor's ``_backward``; ``requires_grad`` tells it whether to.
    """
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericError("non-finite value produced by a tensor operation")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
    return out
