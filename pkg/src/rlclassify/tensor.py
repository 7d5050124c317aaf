"""Dense tensors with reverse-mode differentiation.

Every differentiable primitive in :mod:`rlclassify.ops` returns a
:class:`Tensor` that remembers its parents and a closure computing the
parents' gradients from the gradient of the output.  :func:`backward`
replays those closures in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .errors import ContractError, NonFiniteError

BackwardFn = Callable[[np.ndarray, tuple], tuple]

_dtype = np.dtype(np.float32)


def get_dtype() -> np.dtype:
    return _dtype


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the working precision (used by gradient checks)."""
    global _dtype
    previous = _dtype
    _dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _dtype = previous


def check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by {what}")


class Tensor:
    """An n-dimensional array with an optional accumulated gradient.

    Leaves are created directly; interior nodes come out of ops and hold
    ``_parents``/``_backward`` so that :func:`backward` can walk the graph.
    """

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=get_dtype())
        self.requires_grad = requires_grad
        self.name = name
        self.grad: Optional[np.ndarray] = None
        self.op: Optional[str] = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn, op: str) -> "Tensor":
        check_finite(data, op)
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=get_dtype())
        out.requires_grad = any(p.requires_grad for p in parents)
        out.name = None
        out.grad = None
        out.op = op
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label}, requires_grad={self.requires_grad})"


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
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def trace(loss: Tensor) -> list[Tensor]:
    """Recorded operations reachable from ``loss``, inputs before outputs."""
    return [node for node in _topological(loss) if not node.is_leaf]


def _propagate(loss: Tensor, targets: Optional[Sequence[Tensor]]) -> dict[int, np.ndarray]:
    if loss.data.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topological(loss)
    if targets is None:
        needed = {id(n) for n in order if n.requires_grad}
    else:
        wanted = {id(t) for t in targets}
        needed = set()
        for node in order:
            if id(node) in wanted or any(id(p) in needed for p in node._parents):
                needed.add(id(node))

    keep = {id(t) for t in targets} if targets is not None else set()
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        need = tuple(p.requires_grad and id(p) in needed for p in node._parents)
        if not any(need):
            continue
        parent_grads = node._backward(g, need)
        for parent, pg, wanted_here in zip(node._parents, parent_grads, need):
            if not wanted_here or pg is None:
                continue
            check_finite(pg, f"backward of {node.op}")
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        if node is not loss and id(node) not in keep:
            del grads[id(node)]
    return grads


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it.

    Repeated calls on the same graph add up, so callers reset gradients
    themselves between optimizer steps.
    """
    grads = _propagate(loss, None)
    for node in _topological(loss):
        if node.is_leaf and node.requires_grad and id(node) in grads:
            g = np.asarray(grads[id(node)], dtype=node.data.dtype).reshape(node.shape)
            node.grad = g.copy() if node.grad is None else node.grad + g


def grad(loss: Tensor, inputs: Sequence[Tensor]) -> list[np.ndarray]:
    """Return d(loss)/d(input) for each input without touching any ``.grad``."""
    grads = _propagate(loss, inputs)
    out = []
    for t in inputs:
        g = grads.get(id(t))
        out.append(np.zeros_like(t.data) if g is None else np.asarray(g, dtype=t.data.dtype).reshape(t.shape))
    return out
