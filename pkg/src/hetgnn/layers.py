"""GraphSage relation convolution, heterogeneous convolution, and fusion heads.

All layers are plain functions over parameter dataclasses whose fields are
:class:`~hetgnn.tensor.Tensor` objects, so the same code runs with and
without an active tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ops
from .errors import ShapeError
from .graph import CELL_TO_CELL, CELL_TO_TISSUE, TISSUE_TO_TISSUE, RelationEdges
from .tensor import Tensor


@dataclass
class SageParams:
    w_self: Tensor
    w_neigh: Tensor
    bias: Tensor


@dataclass
class HeteroLayerParams:
    relations: dict  # relation name -> SageParams
    aggregation: str = "sum"


@dataclass
class AwaParams:
    weights: Tensor  # shape (n_levels,)


@dataclass
class EncoderBlockParams:
    ln1_gamma: Tensor
    ln1_beta: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor  # no key bias: softmax rows are invariant to it
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class TransformerParams:
    blocks: list
    heads: int
    width: int


@dataclass
class CrossBranchParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    wv: Tensor
    bv: Tensor


@dataclass
class CrossAttentionParams:
    cell: CrossBranchParams  # cell summary queries tissue nodes
    tissue: CrossBranchParams  # tissue summary queries cell nodes
    last_weights: dict = field(default_factory=dict, repr=False)


def _check_edges(edges: RelationEdges, n_src: int, n_dst: int) -> None:
    if edges.src.size and (
        edges.src.min() < 0 or edges.src.max() >= n_src
        or edges.dst.min() < 0 or edges.dst.max() >= n_dst
    ):
        raise ShapeError(
            f"sage_conv[{edges.relation}]: edge indices exceed {n_src} sources / {n_dst} targets"
        )


def sage_message(edges: RelationEdges, src_feats: Tensor, dst_feats: Tensor, p: SageParams) -> Tensor:
    """Pre-activation ``W_self h_j + W_neigh mean_{i->j} h_i + b`` for every target j."""
    _check_edges(edges, src_feats.shape[0], dst_feats.shape[0])
    if p.w_self.shape[1] != dst_feats.shape[1] or p.w_neigh.shape[1] != src_feats.shape[1]:
        raise ShapeError(
            f"sage_conv[{edges.relation}]: features {src_feats.shape}->{dst_feats.shape} vs "
            f"weights {p.w_neigh.shape}/{p.w_self.shape}"
        )
    neigh = ops.scatter_mean(ops.gather_rows(src_feats, edges.src), edges.dst, dst_feats.shape[0])
    return ops.add(ops.linear(dst_feats, p.w_self, p.bias), ops.linear(neigh, p.w_neigh))


def sage_conv(edges: RelationEdges, src_feats: Tensor, dst_feats: Tensor, p: SageParams) -> Tensor:
    """Mean-aggregator GraphSage layer; targets without in-edges see a zero neighbour term."""
    return ops.relu(sage_message(edges, src_feats, dst_feats, p))


def hetero_conv(graph, cell_feats: Tensor, tissue_feats: Tensor, p: HeteroLayerParams):
    """One heterogeneous layer over a HeteroGraph or GraphBatch.

    Cells receive only cell->cell messages. Tissues combine the
    tissue->tissue and cell->tissue messages with ``p.aggregation``; the
    relu is applied after combining.
    """
    edges = graph.edges
    rel = p.relations
    cells = sage_message(edges[CELL_TO_CELL], cell_feats, cell_feats, rel[CELL_TO_CELL])
    tt = sage_message(edges[TISSUE_TO_TISSUE], tissue_feats, tissue_feats, rel[TISSUE_TO_TISSUE])
    ct = sage_message(edges[CELL_TO_TISSUE], cell_feats, tissue_feats, rel[CELL_TO_TISSUE])
    tissues = ops.add(tt, ct)
    if p.aggregation == "mean":
        tissues = ops.mul(tissues, 0.5)
    elif p.aggregation != "sum":
        raise ValueError(f"unknown relation aggregation {p.aggregation!r}")
    return ops.relu(cells), ops.relu(tissues)


def awa_fuse(p: AwaParams, features: Sequence[Tensor]) -> Tensor:
    """Learned scalar-weighted sum ``w_1 F_1 + ... + w_n F_n``."""
    n = p.weights.shape[0]
    if len(features) != n:
        raise ShapeError(f"awa_fuse: {len(features)} feature levels for {n} weights")
    shapes = {f.shape for f in features}
    if len(shapes) != 1:
        raise ShapeError(f"awa_fuse: feature shapes differ: {sorted(shapes)}")
    stacked = ops.stack(features, axis=0)
    w = ops.reshape(p.weights, (n,) + (1,) * (stacked.ndim - 1))
    return ops.sum(ops.mul(w, stacked), axis=0)


def multi_head_attention(x: Tensor, b: EncoderBlockParams, heads: int, return_weights=False):
    m, width = x.shape
    if width % heads:
        raise ShapeError(f"multi_head_attention: width {width} not divisible by {heads} heads")
    dh = width // heads

    def split(t):
        return ops.transpose(ops.reshape(t, (m, heads, dh)), (1, 0, 2))

    q = split(ops.linear(x, b.wq, b.bq))
    k = split(ops.linear(x, b.wk))
    v = split(ops.linear(x, b.wv, b.bv))
    scores = ops.mul(ops.matmul(q, ops.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
    attn = ops.softmax(scores)
    mixed = ops.reshape(ops.transpose(ops.matmul(attn, v), (1, 0, 2)), (m, width))
    out = ops.linear(mixed, b.wo, b.bo)
    return (out, attn) if return_weights else out


def encoder_block(x: Tensor, b: EncoderBlockParams, heads: int) -> Tensor:
    """Pre-norm block: x + MHA(LN(x)), then + FFN(LN(.))."""
    x = ops.add(x, multi_head_attention(ops.layer_norm(x, b.ln1_gamma, b.ln1_beta), b, heads))
    hidden = ops.relu(ops.linear(ops.layer_norm(x, b.ln2_gamma, b.ln2_beta), b.w1, b.b1))
    return ops.add(x, ops.linear(hidden, b.w2, b.b2))


def transformer_encode(tokens: Tensor, p: TransformerParams) -> Tensor:
    """Encode an (m, width) token matrix; no positional encoding is added."""
    if tokens.ndim != 2 or tokens.shape[1] != p.width:
        raise ShapeError(f"transformer_encode: tokens {tokens.shape}, expected (m, {p.width})")
    if tokens.shape[0] < 1:
        raise ShapeError("transformer_encode: empty token sequence")
    x = tokens
    for block in p.blocks:
        x = encoder_block(x, block, p.heads)
    return x


def build_token_sequence(cell_feats: Tensor, tissue_feats: Tensor) -> Tensor:
    """Cell tokens followed by tissue tokens zero-padded to the cell count (2C rows)."""
    n_cells, n_tissues = cell_feats.shape[0], tissue_feats.shape[0]
    if n_tissues > n_cells:
        raise ShapeError(
            f"build_token_sequence: {n_tissues} tissue nodes exceed {n_cells} cell nodes"
        )
    if cell_feats.shape[1] != tissue_feats.shape[1]:
        raise ShapeError(
            f"build_token_sequence: widths {cell_feats.shape[1]} and {tissue_feats.shape[1]}"
        )
    return ops.concat([cell_feats, ops.pad_rows(tissue_feats, n_cells)], axis=0)


def _cross_attend(summary: Tensor, others: Tensor, b: CrossBranchParams):
    q = ops.linear(summary, b.wq, b.bq)
    k = ops.linear(others, b.wk)
    v = ops.linear(others, b.wv, b.bv)
    scale = 1.0 / math.sqrt(q.shape[1])
    attn = ops.softmax(ops.mul(ops.matmul(q, ops.transpose(k, (1, 0))), scale))
    return ops.add(summary, ops.matmul(attn, v)), attn


def cross_attention_fuse(cell_feats: Tensor, tissue_feats: Tensor, p: CrossAttentionParams):
    """Branch exchange: each branch's mean token queries the other branch's nodes.

    Returns the updated (1, width) cell and tissue summary tokens. The
    attention rows of the latest call are kept in ``p.last_weights``.
    """
    width = p.cell.wq.shape[1]
    for name, feats in (("cell", cell_feats), ("tissue", tissue_feats)):
        if feats.ndim != 2 or feats.shape[1] != width:
            raise ShapeError(f"cross_attention_fuse: {name} features {feats.shape}, width {width}")
        if feats.shape[0] < 1:
            raise ShapeError(f"cross_attention_fuse: no {name} nodes")
    cell_summary = ops.mean(cell_feats, axis=0, keepdims=True)
    tissue_summary = ops.mean(tissue_feats, axis=0, keepdims=True)
    new_cell, a_cell = _cross_attend(cell_summary, tissue_feats, p.cell)
    new_tissue, a_tissue = _cross_attend(tissue_summary, cell_feats, p.tissue)
    p.last_weights = {"cell": a_cell.data, "tissue": a_tissue.data}
    return new_cell, new_tissue


def readout(node_feats: Tensor) -> Tensor:
    """Mean over node rows."""
    if node_feats.ndim != 2 or node_feats.shape[0] < 1:
        raise ShapeError(f"readout: need at least one node row, got shape {node_feats.shape}")
    return ops.mean(node_feats, axis=0)


def batched_readout(node_feats: Tensor, graph_index: np.ndarray, n_graphs: int) -> Tensor:
    """Per-graph mean over node rows, (n_graphs, width)."""
    counts = np.bincount(graph_index, minlength=n_graphs)
    if (counts == 0).any():
        raise ShapeError(f"readout: graph {int(np.flatnonzero(counts == 0)[0])} has no nodes")
    return ops.scatter_mean(node_feats, graph_index, n_graphs)
