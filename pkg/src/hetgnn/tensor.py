"""Dense float64 tensors with tape-based reverse-mode differentiation.

Kernels record themselves on the active :class:`Tape` when at least one
input requires a gradient. :func:`backward` replays the tape in reverse.

Example::

    w = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(w * w)
    grads = backward(tape, loss)
    grads[w]  # array([2., 4.])
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ShapeError


_DTYPE = [np.float64]


def default_dtype():
    return _DTYPE[-1]


@contextmanager
def precision(dtype):
    """Create tensors with ``dtype`` inside the block (float64 otherwise)."""
    _DTYPE.append(dtype)
    try:
        yield
    finally:
        _DTYPE.pop()


class Tensor:
    """An immutable array (float64 unless under :func:`precision`) that may be differentiated."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=default_dtype())
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def assign(self, value: np.ndarray) -> None:
        """Rebind the payload (used by optimizers; saved tape values stay intact)."""
        arr = np.array(value, dtype=default_dtype())
        if arr.shape != self.data.shape:
            raise ShapeError(f"assign: shape {arr.shape} != {self.data.shape}")
        arr.flags.writeable = False
        self.data = arr

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; the kernels live in hetgnn.ops
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Record:
    op: str
    inputs: tuple
    output: Tensor
    # maps the output gradient to one gradient (or None) per input
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Ordered log of executed kernels. Use as a context manager."""

    records: list = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.records)


_ACTIVE: list = []


def active_tape() -> Optional[Tape]:
    return _ACTIVE[-1] if _ACTIVE else None


def record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward_fn) -> Tensor:
    """Wrap ``out_data`` in a Tensor and log it on the active tape if needed."""
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.records.append(Record(op, tuple(inputs), out, backward_fn))
    return out


class GradientTable(dict):
    """Gradients keyed by tensor identity (``Tensor`` does not override ``__eq__``)."""

    def by_name(self) -> dict:
        return {t.name: g for t, g in self.items() if t.name is not None}


def backward(tape: Tape, loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> GradientTable:
    """Gradients of a scalar ``loss`` with respect to every grad-requiring leaf.

    Tensors listed in ``params`` that never reached the loss get a zero
    gradient of their own shape.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    produced = {id(r.output) for r in tape.records}
    grads: dict = {id(loss): np.ones_like(loss.data)}
    leaves: dict = {}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        in_grads = rec.backward(g)
        for t, gi in zip(rec.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise ShapeError(
                    f"backward[{rec.op}]: gradient shape {gi.shape} != input shape {t.shape}"
                )
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if key not in produced:
                leaves[key] = t
    table = GradientTable()
    for key, t in leaves.items():
        table[t] = grads[key]
    if loss.requires_grad and id(loss) not in produced:
        table[loss] = np.ones_like(loss.data)
    if params is not None:
        for p in params:
            if p not in table:
                table[p] = np.zeros_like(p.data)
    return table
