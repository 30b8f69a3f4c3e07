"""Central finite-difference check of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Optional

import numpy as np

from .errors import HetGNNError
from .tensor import Tape, Tensor, backward, precision


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: Optional[str]
    worst_index: Optional[tuple]
    n_checked: int
    n_refined: int = 0  # entries re-measured with a smaller step because of a kink

    def __float__(self) -> float:
        return self.max_rel_error


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    oracle_dtype=np.longdouble,
    refine: float = 1e-3,
) -> GradCheckResult:
    """Compare float64 tape gradients of ``f()`` against central differences.

    ``f`` must read the tensors in ``params`` and return a scalar. Each
    entry is perturbed by +/- ``eps`` in turn and restored bit-for-bit.
    With ``max_entries`` set, that many entries per tensor are sampled
    (without replacement) using ``rng``; otherwise every entry is checked.

    The perturbed losses are evaluated in ``oracle_dtype``. The default,
    extended precision, keeps the difference quotient's rounding noise
    (about ulp(loss) / eps) far below the smallest gradients a relu network
    produces; pass ``np.float64`` for a pure double-precision oracle.

    Relu networks are only piecewise smooth. When the forward and backward
    one-sided slopes of an entry disagree by more than 1e-4 (relative), a
    kink lies within ``eps`` and the central difference measures a chord
    across it. Such entries are re-measured with step ``eps * refine`` and
    counted in ``n_refined``; pass ``refine=None`` to disable this.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    with Tape() as tape:
        loss = f()
    grads = backward(tape, loss, params.values())

    with precision(oracle_dtype):
        center = f().data.reshape(-1)[0]
    worst = GradCheckResult(0.0, None, None, 0)
    for name, p in params.items():
        analytic = grads[p]
        flat_count = p.size
        if max_entries is not None and max_entries < flat_count:
            picks = (rng or np.random.default_rng(0)).choice(flat_count, max_entries, replace=False)
        else:
            picks = range(flat_count)
        original = p.data
        for flat in picks:
            idx = np.unravel_index(int(flat), p.shape)
            numeric, smooth = _central(f, p, name, original, idx, eps, oracle_dtype, center)
            if not smooth and refine:
                numeric, _ = _central(f, p, name, original, idx, eps * refine, oracle_dtype, center)
                worst.n_refined += 1
            err = relative_error(float(analytic[idx]), numeric)
            worst.n_checked += 1
            if err > worst.max_rel_error:
                worst.max_rel_error = err
                worst.worst_param = name
                worst.worst_index = tuple(int(i) for i in idx)
    return worst


def _central(f, p, name, original, idx, eps, dtype, center):
    """Central difference at ``idx`` and whether both one-sided slopes agree."""
    values = []
    with precision(dtype):
        for sign in (1.0, -1.0):
            bumped = original.astype(dtype)
            bumped[idx] += sign * dtype(eps)
            p.data = bumped
            values.append(f().data.reshape(-1)[0])
    p.data = original
    if not all(np.isfinite(v) for v in values):
        raise HetGNNError(f"finite_diff_check: non-finite loss when perturbing {name}{idx}")
    step = dtype(eps)
    ahead, behind = float((values[0] - center) / step), float((center - values[1]) / step)
    numeric = float((values[0] - values[1]) / (2 * step))
    return numeric, relative_error(ahead, behind) <= 1e-4
