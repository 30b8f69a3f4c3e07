"""Kernel backend selection.

The compiled module ``hetgnn._core`` is used when it imports; otherwise the
numpy fallback is used. Setting ``HETGNN_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _fallback

NAME = "numpy"
scatter_add = _fallback.scatter_add
knn_indices = _fallback.knn_indices

if os.environ.get("HETGNN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core
    except ImportError:
        pass
    else:
        NAME = "compiled"
        scatter_add = _core.scatter_add
        knn_indices = _core.knn_indices
