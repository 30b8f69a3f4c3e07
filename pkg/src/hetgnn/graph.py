"""Heterogeneous cell/tissue graphs and block-diagonal batches."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import GraphError

CELL = "cell"
TISSUE = "tissue"
CELL_TO_CELL = "cell->cell"
TISSUE_TO_TISSUE = "tissue->tissue"
CELL_TO_TISSUE = "cell->tissue"
RELATIONS = (CELL_TO_CELL, TISSUE_TO_TISSUE, CELL_TO_TISSUE)
# (source kind, target kind) per relation
ENDPOINTS = {
    CELL_TO_CELL: (CELL, CELL),
    TISSUE_TO_TISSUE: (TISSUE, TISSUE),
    CELL_TO_TISSUE: (CELL, TISSUE),
}


def _frozen(arr, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class EntitySet:
    """Nodes of one kind: an (n, 2) position array and an (n, d) feature matrix."""

    kind: str
    positions: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        if self.kind not in (CELL, TISSUE):
            raise GraphError(f"unknown entity kind {self.kind!r}")
        object.__setattr__(self, "positions", _frozen(self.positions, np.float64).reshape(-1, 2))
        feats = _frozen(self.features, np.float64)
        if feats.ndim != 2:
            raise GraphError(f"{self.kind} features must be 2-D, got shape {feats.shape}")
        object.__setattr__(self, "features", feats)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class RelationEdges:
    """Directed edges ``src[e] -> dst[e]`` for one relation type."""

    relation: str
    src: np.ndarray
    dst: np.ndarray

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise GraphError(f"unknown relation {self.relation!r}")
        src = _frozen(self.src, np.int64).reshape(-1)
        dst = _frozen(self.dst, np.int64).reshape(-1)
        if src.shape != dst.shape:
            raise GraphError(f"{self.relation}: {src.size} sources but {dst.size} targets")
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)

    def __len__(self) -> int:
        return self.src.size

    def pairs(self) -> set:
        return set(zip(self.src.tolist(), self.dst.tolist()))

    @classmethod
    def empty(cls, relation: str) -> "RelationEdges":
        return cls(relation, np.zeros(0, np.int64), np.zeros(0, np.int64))


@dataclass(frozen=True)
class HeteroGraph:
    """Cells, tissues, and the three typed edge lists; optionally labelled."""

    cells: EntitySet
    tissues: EntitySet
    edges: dict
    label: Optional[int] = None

    def entities(self, kind: str) -> EntitySet:
        return self.cells if kind == CELL else self.tissues

    def relabel(self, cell_perm: Sequence[int], tissue_perm: Sequence[int]) -> "HeteroGraph":
        """Consistently renumber nodes: old node i becomes new node ``perm[i]``."""
        perms = {CELL: np.asarray(cell_perm), TISSUE: np.asarray(tissue_perm)}
        new_sets = {}
        for kind, ents in ((CELL, self.cells), (TISSUE, self.tissues)):
            inv = np.argsort(perms[kind])
            new_sets[kind] = EntitySet(kind, ents.positions[inv], ents.features[inv])
        edges = {}
        for rel, e in self.edges.items():
            s_kind, d_kind = ENDPOINTS[rel]
            edges[rel] = RelationEdges(rel, perms[s_kind][e.src], perms[d_kind][e.dst])
        return HeteroGraph(new_sets[CELL], new_sets[TISSUE], edges, self.label)


def validate(graph: HeteroGraph) -> list:
    """Every invariant violation in ``graph``; an empty list means valid."""
    problems = []
    sizes = {}
    for kind, ents in ((CELL, graph.cells), (TISSUE, graph.tissues)):
        n_pos, n_feat = ents.positions.shape[0], ents.features.shape[0]
        if n_pos != n_feat:
            problems.append(f"{kind}: {n_pos} positions but {n_feat} feature rows")
        if n_feat < 1:
            problems.append(f"{kind}: entity set is empty")
        if not np.all(np.isfinite(ents.features)):
            problems.append(f"{kind}: non-finite feature values")
        sizes[kind] = n_feat
    if graph.cells.dim != graph.tissues.dim:
        problems.append(
            f"feature width mismatch: cells {graph.cells.dim}, tissues {graph.tissues.dim}"
        )
    keys = set(graph.edges)
    for rel in RELATIONS:
        if rel not in keys:
            problems.append(f"{rel}: relation missing")
    for rel in sorted(keys - set(RELATIONS)):
        problems.append(f"{rel}: unknown relation")
    for rel in RELATIONS:
        e = graph.edges.get(rel)
        if e is None:
            continue
        s_kind, d_kind = ENDPOINTS[rel]
        for role, idx, kind in (("src", e.src, s_kind), ("dst", e.dst, d_kind)):
            bad = (idx < 0) | (idx >= sizes[kind])
            if bad.any():
                problems.append(
                    f"{rel}: {role} index out of range (e.g. {int(idx[bad][0])}, "
                    f"{kind} count {sizes[kind]})"
                )
        if s_kind == d_kind:
            loops = e.src == e.dst
            if loops.any():
                problems.append(f"{rel}: self-loop at node {int(e.src[loops][0])}")
        seen = set()
        for pair in zip(e.src.tolist(), e.dst.tolist()):
            if pair in seen:
                problems.append(f"{rel}: duplicate edge {pair}")
                break
            seen.add(pair)
    return problems


def check(graph: HeteroGraph) -> HeteroGraph:
    problems = validate(graph)
    if problems:
        raise GraphError("invalid graph: " + "; ".join(problems))
    return graph


@dataclass(frozen=True)
class GraphBatch:
    """Block-diagonal union of graphs.

    ``cell_ptr[g]:cell_ptr[g+1]`` are graph g's rows in ``cell_features``
    (likewise for tissues); ``cell_graph`` maps each cell row to its graph.
    """

    graphs: tuple
    cell_features: np.ndarray
    tissue_features: np.ndarray
    edges: dict
    cell_ptr: np.ndarray
    tissue_ptr: np.ndarray
    cell_graph: np.ndarray
    tissue_graph: np.ndarray
    labels: Optional[np.ndarray]

    @property
    def size(self) -> int:
        return len(self.graphs)

    def cell_range(self, g: int) -> tuple:
        return int(self.cell_ptr[g]), int(self.cell_ptr[g + 1])

    def tissue_range(self, g: int) -> tuple:
        return int(self.tissue_ptr[g]), int(self.tissue_ptr[g + 1])


def batch(graphs: Sequence[HeteroGraph]) -> GraphBatch:
    graphs = tuple(graphs)
    if not graphs:
        raise GraphError("batch: empty graph list")
    dims = {g.cells.dim for g in graphs} | {g.tissues.dim for g in graphs}
    if len(dims) != 1:
        raise GraphError(f"batch: feature widths differ across graphs: {sorted(dims)}")
    n_cells = np.array([g.cells.n for g in graphs])
    n_tissues = np.array([g.tissues.n for g in graphs])
    cell_ptr = np.concatenate([[0], np.cumsum(n_cells)])
    tissue_ptr = np.concatenate([[0], np.cumsum(n_tissues)])
    offsets = {CELL: cell_ptr, TISSUE: tissue_ptr}
    edges = {}
    for rel in RELATIONS:
        s_kind, d_kind = ENDPOINTS[rel]
        srcs, dsts = [], []
        for i, g in enumerate(graphs):
            e = g.edges[rel]
            srcs.append(e.src + offsets[s_kind][i])
            dsts.append(e.dst + offsets[d_kind][i])
        edges[rel] = RelationEdges(rel, np.concatenate(srcs), np.concatenate(dsts))
    labels = None
    if all(g.label is not None for g in graphs):
        labels = _frozen([g.label for g in graphs], np.int64)
    return GraphBatch(
        graphs=graphs,
        cell_features=_frozen(np.concatenate([g.cells.features for g in graphs]), np.float64),
        tissue_features=_frozen(np.concatenate([g.tissues.features for g in graphs]), np.float64),
        edges=edges,
        cell_ptr=cell_ptr,
        tissue_ptr=tissue_ptr,
        cell_graph=np.repeat(np.arange(len(graphs)), n_cells),
        tissue_graph=np.repeat(np.arange(len(graphs)), n_tissues),
        labels=labels,
    )
