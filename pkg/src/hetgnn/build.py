"""Edge formation: kNN graphs within a node type and cell-to-tissue assignment."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import backend
from .errors import GraphError
from .graph import (
    CELL,
    CELL_TO_CELL,
    CELL_TO_TISSUE,
    TISSUE,
    TISSUE_TO_TISSUE,
    EntitySet,
    HeteroGraph,
    RelationEdges,
)

FEATURE = "feature"
SPATIAL = "spatial"
EDGE_MODES = {"feat-knn": FEATURE, "spatial-knn": SPATIAL}


@dataclass(frozen=True)
class KnnConfig:
    k: int = 5
    metric: str = "euclidean"
    space: str = FEATURE

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be positive, got {self.k}")
        if self.metric not in ("euclidean", "cosine"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.space not in (FEATURE, SPATIAL):
            raise ValueError(f"unknown kNN space {self.space!r}")


def _points(nodes: EntitySet, cfg: KnnConfig) -> np.ndarray:
    pts = nodes.features if cfg.space == FEATURE else nodes.positions
    if cfg.k >= nodes.n:
        raise GraphError(
            f"kNN with k={cfg.k} needs at least {cfg.k + 1} {nodes.kind} nodes, got {nodes.n}"
        )
    if not np.all(np.isfinite(pts)):
        raise GraphError(f"kNN: non-finite {cfg.space} vectors in {nodes.kind} set")
    if cfg.metric == "cosine":
        # Euclidean order on unit vectors is cosine-similarity order
        norms = np.linalg.norm(pts, axis=1, keepdims=True)
        pts = pts / np.where(norms > 0, norms, 1.0)
    return np.ascontiguousarray(pts, dtype=np.float64)


def _relation_for(kind: str) -> str:
    return CELL_TO_CELL if kind == CELL else TISSUE_TO_TISSUE


def _symmetric_edges(relation: str, neighbors: np.ndarray) -> RelationEdges:
    n, k = neighbors.shape
    dst = np.repeat(np.arange(n), k)
    src = neighbors.reshape(-1)
    both = np.concatenate([np.stack([src, dst], 1), np.stack([dst, src], 1)])
    both = np.unique(both, axis=0)  # sorted by (src, dst), duplicates removed
    return RelationEdges(relation, both[:, 0], both[:, 1])


def knn_neighbors(nodes: EntitySet, cfg: KnnConfig) -> np.ndarray:
    """(n, k) array: row i lists the k nearest other nodes, nearest first."""
    return backend.knn_indices(_points(nodes, cfg), cfg.k)


def knn_edges(nodes: EntitySet, cfg: KnnConfig) -> RelationEdges:
    """Symmetrised kNN edges; ties in distance go to the lower node index."""
    return _symmetric_edges(_relation_for(nodes.kind), knn_neighbors(nodes, cfg))


def brute_force_knn(nodes: EntitySet, cfg: KnnConfig) -> RelationEdges:
    """Exhaustive O(n^2) reference for :func:`knn_edges`.

    Every pairwise squared distance is formed by direct differencing,
    accumulated coordinate by coordinate, and each row is ordered
    lexicographically by (distance, node index).
    """
    pts = _points(nodes, cfg)
    n = pts.shape[0]
    sq = np.zeros((n, n))
    for c in range(pts.shape[1]):
        diff = pts[:, None, c] - pts[None, :, c]
        sq += diff * diff
    np.fill_diagonal(sq, np.inf)
    index = np.broadcast_to(np.arange(n), (n, n))
    nearest = np.lexsort((index, sq), axis=-1)[:, : cfg.k]
    pairs = set()
    for i, row in enumerate(nearest.tolist()):
        for j in row:
            pairs.add((j, i))
            pairs.add((i, j))
    ordered = sorted(pairs)
    src = [p[0] for p in ordered]
    dst = [p[1] for p in ordered]
    return RelationEdges(_relation_for(nodes.kind), src, dst)


def assignment_edges(
    cells: EntitySet, tissues: EntitySet, explicit_map: Optional[Sequence[int]] = None
) -> RelationEdges:
    """One cell->tissue edge per cell.

    With ``explicit_map`` the edges are taken verbatim; otherwise each cell
    joins the tissue with the nearest centroid (ties to the lower index).
    """
    if explicit_map is not None:
        mapping = np.asarray(explicit_map, dtype=np.int64)
        if mapping.shape != (cells.n,):
            raise GraphError(
                f"assignment map has {mapping.size} entries for {cells.n} cells"
            )
        bad = (mapping < 0) | (mapping >= tissues.n)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise GraphError(
                f"assignment map: cell {i} -> tissue {int(mapping[i])}, "
                f"but only {tissues.n} tissues"
            )
    else:
        diff = cells.positions[:, None, :] - tissues.positions[None, :, :]
        mapping = np.argmin(np.einsum("ctk,ctk->ct", diff, diff), axis=1)
    return RelationEdges(CELL_TO_TISSUE, np.arange(cells.n), mapping)


def build_graph(
    cells: EntitySet,
    tissues: EntitySet,
    edge_mode: str = "feat-knn",
    k: int = 5,
    assignment: Optional[Sequence[int]] = None,
    label: Optional[int] = None,
) -> HeteroGraph:
    """Assemble a HeteroGraph from entity sets.

    ``k`` is capped at ``n - 1`` per node type so small tissue sets become
    complete graphs rather than errors; a single node gets no intra edges.
    """
    if edge_mode not in EDGE_MODES:
        raise ValueError(f"unknown edge mode {edge_mode!r}; expected one of {sorted(EDGE_MODES)}")
    if cells.kind != CELL or tissues.kind != TISSUE:
        raise GraphError("build_graph: expected a cell set and a tissue set")
    space = EDGE_MODES[edge_mode]
    edges = {}
    for ents in (cells, tissues):
        k_eff = min(k, ents.n - 1)
        rel = _relation_for(ents.kind)
        if k_eff < 1:
            edges[rel] = RelationEdges.empty(rel)
        else:
            edges[rel] = knn_edges(ents, KnnConfig(k=k_eff, space=space))
    edges[CELL_TO_TISSUE] = assignment_edges(cells, tissues, assignment)
    return HeteroGraph(cells, tissues, edges, label)
