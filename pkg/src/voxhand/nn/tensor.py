"""Reverse-mode autodiff tape over numpy arrays."""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np

from ..errors import TapeMissing

# per thread, so data-pipeline workers running inference cannot switch off recording for the trainer
_mode = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_mode, "enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = is_grad_enabled()
    _mode.enabled = False
    try:
        yield
    finally:
        _mode.enabled = prev


class Tensor:
    """An array node on the tape.

    ``_backward`` receives the upstream gradient and returns one gradient
    (or ``None``) per parent.  After :meth:`backward` the closures of every
    intermediate node are dropped so saved activations can be freed.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_released", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._released = False
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    @property
    def is_leaf(self) -> bool:
        return self._backward is None and not self._released

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        from .functional import add
        return add(self, other)

    def __mul__(self, other):
        from .functional import scale
        return scale(self, other)

    __rmul__ = __mul__

    def reshape(self, *shape):
        from .functional import reshape
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def backward(self, grad=None):
        if not self.requires_grad:
            raise TapeMissing("tensor does not require grad; nothing was recorded")
        if self._released:
            raise TapeMissing("tape already released by an earlier backward()")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype).reshape(self.shape)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        pending: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if node._backward is None:
                if g is not None:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if g is not None:
                grads = node._backward(g)
                for parent, pg in zip(node._parents, grads):
                    if pg is None or not parent.requires_grad:
                        continue
                    key = id(parent)
                    pending[key] = pg if key not in pending else pending[key] + pg
            node._backward = None
            node._parents = ()
            node._released = True


class Parameter(Tensor):
    """Trainable leaf carrying its own Adam state."""

    __slots__ = ("adam_m", "adam_v", "step_count")

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data), requires_grad=True, name=name)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0

    def zero_grad(self):
        self.grad = None


def record(out: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``out`` and attach ``backward`` when any parent needs a gradient."""
    t = Tensor(out)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = backward
    return t


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))
