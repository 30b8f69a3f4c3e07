"""Differentiable kernels.

Every function takes and returns :class:`~hetgnn.tensor.Tensor` and registers
a backward closure on the active tape. Python scalars and arrays are accepted
wherever a constant operand makes sense.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import _fallback, backend
from .errors import ShapeError
from .tensor import Tensor, as_tensor, record

LAYER_NORM_EPS = 1e-10


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record("add", (a, b), a.data + b.data, back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record("sub", (a, b), a.data - b.data, back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record("mul", (a, b), a.data * b.data, back)


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not conformable")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not conformable") from None

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record("matmul", (a, b), a.data @ b.data, back)


def linear(x, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` shaped (out, in)."""
    x = as_tensor(x)
    if weight.ndim != 2 or x.ndim < 1 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} and weight {weight.shape} are not conformable")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        g2 = g.reshape(-1, weight.shape[0])
        x2 = x.data.reshape(-1, weight.shape[1])
        grads = [g @ weight.data, g2.T @ x2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return record("linear", inputs, out, back)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def back(g):
        return (g * mask,)

    return record("relu", (x,), np.where(mask, x.data, 0.0), back)


def softmax(x) -> Tensor:
    """Softmax over the last axis."""
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ShapeError(f"softmax: empty last axis in shape {x.shape}")
    z = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    y = z / z.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return record("softmax", (x,), y, back)


def layer_norm(x, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalise the last axis to zero mean and unit variance, then scale and shift."""
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ShapeError(f"layer_norm: empty last axis in shape {x.shape}")
    width = x.shape[-1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise ShapeError(
            f"layer_norm: input {x.shape} vs scale {gamma.shape} / shift {beta.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std

    def back(g):
        gx_hat = g * gamma.data
        gx = inv_std * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        g2 = g.reshape(-1, width)
        return gx, (g2 * xhat.reshape(-1, width)).sum(axis=0), g2.sum(axis=0)

    return record("layer_norm", (x, gamma, beta), xhat * gamma.data + beta.data, back)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no inputs")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: shapes {shapes} cannot be joined on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return np.split(g, bounds, axis=axis)

    return record("concat", tensors, out, back)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("stack: no inputs")
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes {sorted(shapes)} differ")

    def back(g):
        return [np.take(g, i, axis=axis) for i in range(len(tensors))]

    return record("stack", tensors, np.stack([t.data for t in tensors], axis=axis), back)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record("sum", (x,), x.data.sum(axis=axis, keepdims=keepdims), back)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    if count == 0:
        raise ShapeError(f"mean: empty reduction over axis {axis} of shape {x.shape}")

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return record("mean", (x,), x.data.mean(axis=axis, keepdims=keepdims), back)


def _scatter(values: np.ndarray, index: np.ndarray, n_targets: int) -> np.ndarray:
    if values.dtype == np.float64:
        return backend.scatter_add(np.ascontiguousarray(values), index, n_targets)
    return _fallback.scatter_add(values, index, n_targets)


def _check_index(op: str, values: Tensor, index: np.ndarray, n_targets: int) -> np.ndarray:
    index = np.ascontiguousarray(index, dtype=np.int64)
    if values.ndim != 2 or index.ndim != 1 or index.shape[0] != values.shape[0]:
        raise ShapeError(f"{op}: values {values.shape} and index {index.shape} do not align")
    if index.size and (index.min() < 0 or index.max() >= n_targets):
        raise ShapeError(f"{op}: index outside [0, {n_targets})")
    return index


def scatter_add(values, index, n_targets: int) -> Tensor:
    """Per-target sum of the rows of ``values``; ``index[e]`` names row e's target."""
    values = as_tensor(values)
    index = _check_index("scatter_add", values, index, n_targets)

    def back(g):
        return (g[index],)

    return record("scatter_add", (values,), _scatter(values.data, index, n_targets), back)


def scatter_mean(values, index, n_targets: int) -> Tensor:
    """Per-target mean of the rows of ``values``; targets with no rows get zeros."""
    values = as_tensor(values)
    index = _check_index("scatter_mean", values, index, n_targets)
    counts = np.bincount(index, minlength=n_targets).astype(np.float64)
    scale = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)[:, None]
    totals = _scatter(values.data, index, n_targets)

    def back(g):
        return ((g * scale)[index],)

    return record("scatter_mean", (values,), totals * scale, back)


def gather_rows(x, index) -> Tensor:
    x = as_tensor(x)
    index = np.ascontiguousarray(index, dtype=np.int64)
    if x.ndim != 2:
        raise ShapeError(f"gather_rows: expected a matrix, got shape {x.shape}")
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ShapeError(f"gather_rows: index outside [0, {x.shape[0]})")

    def back(g):
        return (_scatter(g, index, x.shape[0]),)

    return record("gather_rows", (x,), x.data[index], back)


def slice_rows(x, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    if not 0 <= start <= stop <= x.shape[0]:
        raise ShapeError(f"slice_rows: [{start}:{stop}] outside {x.shape[0]} rows")

    def back(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return (full,)

    return record("slice_rows", (x,), x.data[start:stop], back)


def pad_rows(x, n_rows: int) -> Tensor:
    """Append exact-zero rows until ``x`` has ``n_rows`` rows."""
    x = as_tensor(x)
    if x.ndim != 2 or n_rows < x.shape[0]:
        raise ShapeError(f"pad_rows: cannot pad shape {x.shape} to {n_rows} rows")
    out = np.zeros((n_rows, x.shape[1]), dtype=x.data.dtype)
    out[: x.shape[0]] = x.data

    def back(g):
        return (g[: x.shape[0]],)

    return record("pad_rows", (x,), out, back)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from None

    def back(g):
        return (g.reshape(x.shape),)

    return record("reshape", (x,), out, back)


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inverse = tuple(np.argsort(axes))

    def back(g):
        return (g.transpose(inverse),)

    return record("transpose", (x,), x.data.transpose(axes), back)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``.

    ``logits`` is (n_classes,) with an int label, or (batch, n_classes) with
    one label per row.
    """
    logits = as_tensor(logits)
    single = logits.ndim == 1
    z = logits.data[None, :] if single else logits.data
    if z.ndim != 2 or z.shape[1] == 0:
        raise ShapeError(f"cross_entropy: logits shape {logits.shape}")
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape != (z.shape[0],):
        raise ShapeError(f"cross_entropy: {labels.shape[0]} labels for logits {logits.shape}")
    if labels.min() < 0 or labels.max() >= z.shape[1]:
        raise ValueError(f"cross_entropy: label outside [0, {z.shape[1]})")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    nll = log_norm - shifted[rows, labels]
    loss = nll.mean()

    def back(g):
        probs = np.exp(shifted - log_norm[:, None])
        probs[rows, labels] -= 1.0
        grad = probs * (g / z.shape[0])
        return (grad[0] if single else grad,)

    return record("cross_entropy", (logits,), np.array(loss), back)
