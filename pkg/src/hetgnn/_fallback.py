"""Pure numpy versions of the compiled kernels in ``_core.pyx``."""

import numpy as np

# bound on elements materialised per distance block
_BLOCK_ELEMS = 1 << 22


def scatter_add(values, index, n_targets):
    """Row-wise ``out[index[e]] += values[e]``, accumulated in edge order."""
    values = np.asarray(values)
    if values.dtype.kind != "f":
        values = values.astype(np.float64)
    index = np.ascontiguousarray(index, dtype=np.int64)
    if index.shape[0] != values.shape[0]:
        raise ValueError(
            f"scatter_add: index length {index.shape[0]} != value rows {values.shape[0]}"
        )
    if index.size and (index.min() < 0 or index.max() >= n_targets):
        bad = index[(index < 0) | (index >= n_targets)][0]
        raise IndexError(f"scatter_add: target {bad} out of range [0, {n_targets})")
    out = np.zeros((n_targets, values.shape[1]), dtype=values.dtype)
    np.add.at(out, index, values)
    return out


def _squared_distances(a, b):
    # coordinates are accumulated in order, as the compiled loop does, so
    # both backends round identically and resolve near-ties the same way
    dist = np.zeros((a.shape[0], b.shape[0]))
    for c in range(a.shape[1]):
        diff = a[:, None, c] - b[None, :, c]
        dist += diff * diff
    return dist


def knn_indices(points, k):
    """For each row i, the k nearest rows j != i; ties go to the lower index."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    n, d = points.shape
    if k < 1 or k >= n:
        raise ValueError(f"knn_indices: need 1 <= k < n, got k={k}, n={n}")
    result = np.empty((n, k), dtype=np.int64)
    rows = max(1, _BLOCK_ELEMS // n)
    for start in range(0, n, rows):
        stop = min(n, start + rows)
        dist = _squared_distances(points[start:stop], points)
        dist[np.arange(stop - start), np.arange(start, stop)] = np.inf
        result[start:stop] = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return result
