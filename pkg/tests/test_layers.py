import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hetgnn import ops
from hetgnn.errors import ShapeError
from hetgnn.graph import CELL, CELL_TO_CELL, CELL_TO_TISSUE, RELATIONS, TISSUE, TISSUE_TO_TISSUE, EntitySet, HeteroGraph, RelationEdges
from hetgnn.layers import (
    AwaParams,
    CrossAttentionParams,
    CrossBranchParams,
    EncoderBlockParams,
    HeteroLayerParams,
    SageParams,
    TransformerParams,
    awa_fuse,
    build_token_sequence,
    cross_attention_fuse,
    hetero_conv,
    multi_head_attention,
    readout,
    sage_conv,
    sage_message,
    transformer_encode,
)
from hetgnn.tensor import Tensor

from conftest import random_graph


def T(x):
    return Tensor(np.asarray(x, dtype=float))


def sage(rng, d_in, d_out):
    return SageParams(T(rng.normal(size=(d_out, d_in))), T(rng.normal(size=(d_out, d_in))), T(rng.normal(size=d_out)))


def encoder(rng, width=8, ffn=12, scale=0.3):
    def m(*s):
        return T(rng.normal(scale=scale, size=s))

    return EncoderBlockParams(T(np.ones(width)), T(np.zeros(width)), m(width, width), m(width), m(width, width),
                              m(width, width), m(width), m(width, width), m(width), T(np.ones(width)),
                              T(np.zeros(width)), m(ffn, width), m(ffn), m(width, ffn), m(width))


def cross(rng, width=8):
    def branch():
        return CrossBranchParams(*(T(rng.normal(scale=0.3, size=s)) for s in
                                   ((width, width), (width,), (width, width), (width, width), (width,))))

    return CrossAttentionParams(branch(), branch())


# sage_conv

def test_mean_aggregator_arithmetic():
    edges = RelationEdges(CELL_TO_CELL, [0, 2], [1, 1])
    h = T([[3.0], [1.0], [5.0]])
    p = SageParams(T([[1.0]]), T([[1.0]]), T([0.0]))
    assert sage_conv(edges, h, h, p).data[1].tolist() == [5.0]


def test_isolated_node_uses_zero_neighbour_term():
    p = SageParams(T([[1.0]]), T([[1.0]]), T([0.0]))
    out = sage_conv(RelationEdges.empty(CELL_TO_CELL), T([[-2.0]]), T([[-2.0]]), p)
    assert out.data.tolist() == [[0.0]]


def test_zero_weights_give_zero_output(rng):
    g = random_graph(rng, 10, 3, dim=4)
    p = SageParams(T(np.zeros((3, 4))), T(np.zeros((3, 4))), T(np.zeros(3)))
    h = T(g.cells.features)
    assert not sage_conv(g.edges[CELL_TO_CELL], h, h, p).data.any()


def test_sage_width_mismatch_rejected(rng):
    g = random_graph(rng, 6, 2, dim=4)
    h = T(g.cells.features)
    with pytest.raises(ShapeError, match="sage_conv"):
        sage_conv(g.edges[CELL_TO_CELL], h, h, sage(rng, 5, 3))


def test_sage_bad_edge_index_rejected():
    h = T(np.ones((2, 1)))
    p = SageParams(T([[1.0]]), T([[1.0]]), T([0.0]))
    with pytest.raises(ShapeError):
        sage_conv(RelationEdges(CELL_TO_CELL, [0], [5]), h, h, p)


# hetero_conv

def _layer(rng, d_in, d_out, aggregation="sum"):
    return HeteroLayerParams({r: sage(rng, d_in, d_out) for r in RELATIONS}, aggregation)


def test_tissue_output_combines_two_relations(rng):
    g = random_graph(rng, 12, 4, dim=5)
    p = _layer(rng, 5, 3)
    hc, ht = T(g.cells.features), T(g.tissues.features)
    _, tissues = hetero_conv(g, hc, ht, p)
    v = sage_message(g.edges[TISSUE_TO_TISSUE], ht, ht, p.relations[TISSUE_TO_TISSUE]).data
    w = sage_message(g.edges[CELL_TO_TISSUE], hc, ht, p.relations[CELL_TO_TISSUE]).data
    np.testing.assert_allclose(tissues.data, np.maximum(v + w, 0.0), rtol=0, atol=1e-13)


def test_mean_relation_aggregation(rng):
    g = random_graph(rng, 12, 4, dim=5)
    p_sum, p_mean = _layer(np.random.default_rng(1), 5, 3), _layer(np.random.default_rng(1), 5, 3, "mean")
    hc, ht = T(g.cells.features), T(g.tissues.features)
    v = sage_message(g.edges[TISSUE_TO_TISSUE], ht, ht, p_sum.relations[TISSUE_TO_TISSUE]).data
    w = sage_message(g.edges[CELL_TO_TISSUE], hc, ht, p_sum.relations[CELL_TO_TISSUE]).data
    _, tissues = hetero_conv(g, hc, ht, p_mean)
    np.testing.assert_allclose(tissues.data, np.maximum((v + w) / 2, 0.0), rtol=0, atol=1e-13)


def test_empty_cross_relation_reduces_to_tissue_graph(rng):
    g = random_graph(rng, 12, 4, dim=5)
    g = HeteroGraph(g.cells, g.tissues, {**g.edges, CELL_TO_TISSUE: RelationEdges.empty(CELL_TO_TISSUE)})
    rels = {r: sage(rng, 5, 3) for r in RELATIONS}
    rels[CELL_TO_TISSUE] = SageParams(T(np.zeros((3, 5))), rels[CELL_TO_TISSUE].w_neigh, T(np.zeros(3)))
    hc, ht = T(g.cells.features), T(g.tissues.features)
    _, tissues = hetero_conv(g, hc, ht, HeteroLayerParams(rels))
    expected = sage_conv(g.edges[TISSUE_TO_TISSUE], ht, ht, rels[TISSUE_TO_TISSUE]).data
    assert np.array_equal(tissues.data, expected)


def test_cells_ignore_tissue_messages(rng):
    g = random_graph(rng, 9, 3, dim=4)
    p = _layer(rng, 4, 3)
    hc = T(g.cells.features)
    a, _ = hetero_conv(g, hc, T(g.tissues.features), p)
    b, _ = hetero_conv(g, hc, T(rng.normal(size=(3, 4))), p)
    assert np.array_equal(a.data, b.data)


def test_unknown_relation_aggregation(rng):
    g = random_graph(rng, 6, 2, dim=3)
    with pytest.raises(ValueError, match="aggregation"):
        hetero_conv(g, T(g.cells.features), T(g.tissues.features), _layer(rng, 3, 2, "max"))


# awa_fuse

def test_awa_one_hot():
    F = [T(np.full(256, 2.0)), T(np.arange(256.0))]
    assert np.array_equal(awa_fuse(AwaParams(T([1.0, 0.0])), F).data, np.full(256, 2.0))


def test_awa_half_half():
    F = [T(np.full(256, 2.0)), T(np.full(256, 9.0))]
    assert np.array_equal(awa_fuse(AwaParams(T([0.5, 0.5])), F).data, np.full(256, 5.5))


def test_awa_zero_weights():
    F = [T(np.ones(256)), T(np.ones(256))]
    assert not awa_fuse(AwaParams(T([0.0, 0.0])), F).data.any()


@pytest.mark.parametrize("features", [[np.ones(4), np.ones(5)], [np.ones(4)] * 3])
def test_awa_rejects_bad_inputs(features):
    with pytest.raises(ShapeError):
        awa_fuse(AwaParams(T([0.5, 0.5])), [T(f) for f in features])


vectors = arrays(np.float64, 16, elements=st.floats(-100, 100))


@given(st.lists(vectors, min_size=2, max_size=5), st.floats(-10, 10), st.data())
def test_awa_is_linear_in_weights_and_features(F, alpha, data):
    n = len(F)
    w = np.array(data.draw(st.lists(st.floats(-10, 10), min_size=n, max_size=n)))
    G = [data.draw(vectors) for _ in range(n)]

    def fuse(weights, feats):
        return awa_fuse(AwaParams(T(weights)), [T(f) for f in feats]).data

    # bound on the magnitude of any term, so the tolerance is relative to it
    size = 1.0 + 10 * n * 10 * 200
    assert np.max(np.abs(fuse(alpha * w, F) - alpha * fuse(w, F))) <= 1e-12 * size
    assert np.max(np.abs(fuse(w, [f + g for f, g in zip(F, G)]) - (fuse(w, F) + fuse(w, G)))) <= 1e-12 * size


# transformer

def test_single_token_attention_is_one(rng):
    b = encoder(rng)
    x = T(rng.normal(size=(1, 8)))
    out, attn = multi_head_attention(x, b, heads=2, return_weights=True)
    assert np.array_equal(attn.data, np.ones((2, 1, 1)))
    v = x.data @ b.wv.data.T + b.bv.data
    np.testing.assert_allclose(out.data, v @ b.wo.data.T + b.bo.data, rtol=0, atol=1e-14)


def test_attention_rows_sum_to_one(rng):
    _, attn = multi_head_attention(T(rng.normal(size=(7, 8))), encoder(rng), heads=4, return_weights=True)
    assert np.all(np.abs(attn.data.sum(axis=-1) - 1.0) <= 1e-12)


def test_heads_must_divide_width(rng):
    with pytest.raises(ShapeError, match="divisible"):
        multi_head_attention(T(rng.normal(size=(3, 8))), encoder(rng), heads=3)


def test_token_permutation_equivariance(rng):
    p = TransformerParams([encoder(rng)], heads=2, width=8)
    x = rng.normal(size=(9, 8))
    perm = rng.permutation(9)
    a = transformer_encode(T(x), p).data
    b = transformer_encode(T(x[perm]), p).data
    assert np.max(np.abs(a[perm] - b)) <= 1e-10


def test_zero_ffn_and_output_projection_is_identity(rng):
    b = encoder(rng)
    zero = {"wo": T(np.zeros((8, 8))), "bo": T(np.zeros(8)), "w2": T(np.zeros((8, 12))), "b2": T(np.zeros(8))}
    b = EncoderBlockParams(**{**b.__dict__, **zero})
    x = rng.normal(size=(5, 8))
    assert np.array_equal(transformer_encode(T(x), TransformerParams([b], 2, 8)).data, x)


def test_transformer_rejects_wrong_width(rng):
    with pytest.raises(ShapeError, match="transformer_encode"):
        transformer_encode(T(np.ones((3, 6))), TransformerParams([encoder(rng)], 2, 8))


def test_token_sequence_layout():
    cells, tissues = T(np.arange(1.0, 7.0).reshape(3, 2)), T([[9.0, 9.0]])
    seq = build_token_sequence(cells, tissues).data
    assert seq.shape == (6, 2)
    assert np.array_equal(seq[:3], cells.data) and np.array_equal(seq[3], [9.0, 9.0])
    assert not seq[4:].any()


def test_token_sequence_without_padding(rng):
    c, t = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    assert np.array_equal(build_token_sequence(T(c), T(t)).data, np.vstack([c, t]))


def test_token_sequence_rejects_more_tissues_than_cells():
    with pytest.raises(ShapeError, match="3 tissue nodes exceed 2 cell nodes"):
        build_token_sequence(T(np.ones((2, 4))), T(np.ones((3, 4))))


# cross attention

def test_singleton_tissue_branch(rng):
    p = cross(rng)
    cells, tissue = rng.normal(size=(5, 8)), rng.normal(size=(1, 8))
    new_cell, _ = cross_attention_fuse(T(cells), T(tissue), p)
    assert np.array_equal(p.last_weights["cell"], [[1.0]])
    v = tissue @ p.cell.wv.data.T + p.cell.bv.data
    np.testing.assert_allclose(new_cell.data, cells.mean(axis=0, keepdims=True) + v, rtol=0, atol=1e-14)


def test_identical_tissue_nodes_make_count_irrelevant(rng):
    p = cross(rng)
    cells, node = T(rng.normal(size=(4, 8))), rng.normal(size=(1, 8))
    a, _ = cross_attention_fuse(cells, T(np.repeat(node, 2, axis=0)), p)
    b, _ = cross_attention_fuse(cells, T(np.repeat(node, 7, axis=0)), p)
    np.testing.assert_allclose(a.data, b.data, rtol=0, atol=1e-14)


def test_cross_attention_rows_sum_to_one(rng):
    p = cross(rng, width=256)
    cross_attention_fuse(T(rng.normal(size=(4, 256))), T(rng.normal(size=(3, 256))), p)
    for w in p.last_weights.values():
        assert np.all(np.abs(w.sum(axis=-1) - 1.0) <= 1e-12)


def test_cross_attention_width_mismatch(rng):
    with pytest.raises(ShapeError, match="cross_attention_fuse"):
        cross_attention_fuse(T(np.ones((3, 8))), T(np.ones((2, 6))), cross(rng))


# readout

def test_readout_cases():
    v = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(readout(T([v])).data, v)
    assert not readout(T([v, -v])).data.any()
    assert np.array_equal(readout(T([[1.0, 2.0], [3.0, 4.0], [5.0, 9.0]])).data, [3.0, 5.0])


def test_readout_rejects_empty():
    with pytest.raises(ShapeError, match="readout"):
        readout(T(np.zeros((0, 3))))
