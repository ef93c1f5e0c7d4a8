"""Tensor type, tape records and reverse-mode backward pass."""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = ["Tensor", "Record", "Tape", "ShapeError", "backward", "no_grad", "grad_enabled"]


class ShapeError(ValueError):
    """Incompatible operand shapes for a primitive."""

    def __init__(self, op: str, *shapes):
        shown = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shown}")
        self.op = op
        self.shapes = shapes


_local = threading.local()


def grad_enabled() -> bool:
    return getattr(_local, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording in the current thread."""
    prev = grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


@dataclass(eq=False)
class Record:
    """One primitive application on the tape.

    ``vjp`` maps the output cotangent to one cotangent per input (``None`` for
    inputs that do not need one).
    """

    op: str
    inputs: tuple["Tensor", ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """Dense n-d array that can take part in reverse-mode differentiation."""

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._record: Record | None = None

    @classmethod
    def _from_op(cls, op: str, data: np.ndarray, inputs: tuple["Tensor", ...], vjp) -> "Tensor":
        needs = grad_enabled() and any(t.requires_grad for t in inputs)
        out = cls(data, requires_grad=needs)
        if needs:
            out._record = Record(op, inputs, vjp)
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._record is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar; implementations live in ops.py
    def __add__(self, other):
        from . import ops

        return ops.add_scalar(self, other) if np.isscalar(other) else ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        if np.isscalar(other):
            return ops.add_scalar(self, -other)
        return ops.add(self, ops.neg(_as_tensor(other, self)))

    def __rsub__(self, other):
        from . import ops

        return ops.add_scalar(ops.neg(self), other) if np.isscalar(other) else ops.add(
            _as_tensor(other, self), ops.neg(self)
        )

    def __neg__(self):
        from . import ops

        return ops.neg(self)

    def __mul__(self, other):
        from . import ops

        return ops.scale(self, other) if np.isscalar(other) else ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops

        if not np.isscalar(other):
            raise TypeError("only division by a scalar is supported")
        return ops.scale(self, 1.0 / other)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, _as_tensor(other, self))

    @property
    def T(self):
        from . import ops

        return ops.transpose(self)

    def sum(self, axis=None):
        from . import ops

        return ops.sum(self, axis)

    def mean(self):
        from . import ops

        return ops.mean(self)


def _as_tensor(x, like: Tensor) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=like.dtype)


class Tape:
    """Records reachable from ``output`` in topological (execution) order."""

    def __init__(self, output: Tensor):
        self.output = output
        self.tensors = _topological(output)

    @property
    def records(self) -> list[Record]:
        return [t._record for t in self.tensors if t._record is not None]

    def summary(self) -> list[tuple[str, tuple[int, ...], int]]:
        """(op, input ids, output id) per record; ids are tensor ``id()``s."""
        return [
            (t._record.op, tuple(id(i) for i in t._record.inputs), id(t))
            for t in self.tensors
            if t._record is not None
        ]

    def __len__(self) -> int:
        return len(self.records)


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
        if node._record is not None:
            for parent in reversed(node._record.inputs):
                if id(parent) not in seen and parent.requires_grad:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor, inputs: Sequence[Tensor] | None = None, retain_graph: bool = False) -> None:
    """Accumulate d loss / d leaf into ``leaf.grad`` for every reachable leaf.

    Leaves listed in ``inputs`` that the loss does not depend on get a zero
    gradient.  The tape is released afterwards unless ``retain_graph``.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topological(loss) if loss.requires_grad else [loss]
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        rec = node._record
        if rec is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(rec.inputs, rec.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    if not retain_graph:
        for node in order:
            node._record = None
    for leaf in inputs or ():
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)
