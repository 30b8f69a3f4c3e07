"""The four model variants: HG, HG+AWA, HG+CrossVit and HG+Transformer.

Every variant runs two heterogeneous GraphSage layers (in_dim -> hidden ->
hidden) and then a variant-specific fusion head followed by a two-layer
MLP classifier.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Optional, Union

import numpy as np

from . import ops
from .graph import RELATIONS, GraphBatch, HeteroGraph, batch
from .layers import (
    AwaParams,
    CrossAttentionParams,
    CrossBranchParams,
    EncoderBlockParams,
    HeteroLayerParams,
    SageParams,
    TransformerParams,
    awa_fuse,
    batched_readout,
    build_token_sequence,
    cross_attention_fuse,
    hetero_conv,
    readout,
    transformer_encode,
)
from .tensor import Tensor

VARIANTS = ("hg", "hg-awa", "hg-crossvit", "hg-transformer")
N_HETERO_LAYERS = 2
AWA_LEVELS = 4  # (cell, tissue) readouts after each of the two hetero layers

_REL_NAMES = {r: r.replace("->", "_to_") for r in RELATIONS}


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "hg-transformer"
    in_dim: int = 512
    hidden: int = 256
    n_classes: int = 6
    heads: int = 4
    ffn_dim: int = 512
    transformer_layers: int = 1
    mlp_hidden: int = 128
    aggregation: str = "sum"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.aggregation not in ("sum", "mean"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.hidden % self.heads:
            raise ValueError(f"hidden width {self.hidden} not divisible by {self.heads} heads")
        for name in ("in_dim", "hidden", "heads", "ffn_dim", "transformer_layers", "mlp_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def parameter_shapes(cfg: ModelConfig) -> "OrderedDict[str, tuple]":
    """Name -> shape of every trainable tensor, in a fixed order."""
    shapes = OrderedDict()

    def lin(prefix, n_out, n_in, bias=True):
        shapes[f"{prefix}.weight"] = (n_out, n_in)
        if bias:
            shapes[f"{prefix}.bias"] = (n_out,)

    for layer in range(N_HETERO_LAYERS):
        d_in = cfg.in_dim if layer == 0 else cfg.hidden
        for rel in RELATIONS:
            base = f"conv{layer + 1}.{_REL_NAMES[rel]}"
            shapes[f"{base}.w_self"] = (cfg.hidden, d_in)
            shapes[f"{base}.w_neigh"] = (cfg.hidden, d_in)
            shapes[f"{base}.bias"] = (cfg.hidden,)
    h = cfg.hidden
    if cfg.variant == "hg-awa":
        shapes["awa.weights"] = (AWA_LEVELS,)
    elif cfg.variant == "hg-transformer":
        for i in range(cfg.transformer_layers):
            base = f"transformer.{i}"
            shapes[f"{base}.ln1.gamma"] = (h,)
            shapes[f"{base}.ln1.beta"] = (h,)
            for proj in ("q", "k", "v", "o"):
                lin(f"{base}.attn.{proj}", h, h, bias=proj != "k")
            shapes[f"{base}.ln2.gamma"] = (h,)
            shapes[f"{base}.ln2.beta"] = (h,)
            lin(f"{base}.ffn.fc1", cfg.ffn_dim, h)
            lin(f"{base}.ffn.fc2", h, cfg.ffn_dim)
    elif cfg.variant == "hg-crossvit":
        for branch in ("cell", "tissue"):
            for proj in ("q", "k", "v"):
                lin(f"cross.{branch}.{proj}", h, h, bias=proj != "k")
    lin("mlp.fc1", cfg.mlp_hidden, classifier_input_width(cfg))
    lin("mlp.fc2", cfg.n_classes, cfg.mlp_hidden)
    return shapes


def classifier_input_width(cfg: ModelConfig) -> int:
    # HG and HG+CrossVit concatenate a cell and a tissue vector
    return 2 * cfg.hidden if cfg.variant in ("hg", "hg-crossvit") else cfg.hidden


def init_parameters(cfg: ModelConfig, rng: np.random.Generator) -> "OrderedDict[str, np.ndarray]":
    """Uniform(+-1/sqrt(fan_in)) for weights and biases; layer norms start at (1, 0)."""
    values = OrderedDict()
    shapes = parameter_shapes(cfg)
    for name, shape in shapes.items():
        if name.endswith(".gamma"):
            values[name] = np.ones(shape)
        elif name.endswith(".beta"):
            values[name] = np.zeros(shape)
        elif name == "awa.weights":
            values[name] = np.full(shape, 1.0 / AWA_LEVELS)
        else:
            if len(shape) == 2:
                fan_in = shape[1]
            else:
                owner = name.rsplit(".", 1)[0]
                w_key = f"{owner}.weight" if f"{owner}.weight" in shapes else f"{owner}.w_self"
                fan_in = shapes[w_key][1]
            bound = 1.0 / math.sqrt(fan_in)
            values[name] = rng.uniform(-bound, bound, size=shape)
    return values


class HGModel:
    """A model variant with named, countable parameters."""

    def __init__(self, config: ModelConfig, values: Optional[dict] = None, seed: int = 0):
        self.config = config
        if values is None:
            values = init_parameters(config, np.random.default_rng(seed))
        shapes = parameter_shapes(config)
        missing = set(shapes) - set(values)
        extra = set(values) - set(shapes)
        if missing or extra:
            raise ValueError(
                f"parameter names do not match config: missing {sorted(missing)}, "
                f"unexpected {sorted(extra)}"
            )
        self.params = OrderedDict()
        for name, shape in shapes.items():
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"parameter {name}: shape {arr.shape}, expected {shape}")
            self.params[name] = Tensor(arr, requires_grad=True, name=name)
        self._structure()

    def _structure(self):
        p = self.params
        cfg = self.config

        def sage(base):
            return SageParams(p[f"{base}.w_self"], p[f"{base}.w_neigh"], p[f"{base}.bias"])

        self.convs = [
            HeteroLayerParams(
                {rel: sage(f"conv{i + 1}.{_REL_NAMES[rel]}") for rel in RELATIONS},
                cfg.aggregation,
            )
            for i in range(N_HETERO_LAYERS)
        ]
        self.awa = AwaParams(p["awa.weights"]) if cfg.variant == "hg-awa" else None
        self.transformer = None
        if cfg.variant == "hg-transformer":
            blocks = []
            for i in range(cfg.transformer_layers):
                b = f"transformer.{i}"
                blocks.append(EncoderBlockParams(
                    p[f"{b}.ln1.gamma"], p[f"{b}.ln1.beta"],
                    p[f"{b}.attn.q.weight"], p[f"{b}.attn.q.bias"],
                    p[f"{b}.attn.k.weight"],
                    p[f"{b}.attn.v.weight"], p[f"{b}.attn.v.bias"],
                    p[f"{b}.attn.o.weight"], p[f"{b}.attn.o.bias"],
                    p[f"{b}.ln2.gamma"], p[f"{b}.ln2.beta"],
                    p[f"{b}.ffn.fc1.weight"], p[f"{b}.ffn.fc1.bias"],
                    p[f"{b}.ffn.fc2.weight"], p[f"{b}.ffn.fc2.bias"],
                ))
            self.transformer = TransformerParams(blocks, cfg.heads, cfg.hidden)
        self.cross = None
        if cfg.variant == "hg-crossvit":
            def branch(name):
                return CrossBranchParams(
                    p[f"cross.{name}.q.weight"], p[f"cross.{name}.q.bias"],
                    p[f"cross.{name}.k.weight"],
                    p[f"cross.{name}.v.weight"], p[f"cross.{name}.v.bias"],
                )

            self.cross = CrossAttentionParams(branch("cell"), branch("tissue"))

    @property
    def variant(self) -> str:
        return self.config.variant

    def named_parameters(self) -> "OrderedDict[str, Tensor]":
        return self.params

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self.params.items())

    def load_state(self, values: dict) -> None:
        for name, t in self.params.items():
            t.assign(values[name])

    def count_params(self) -> int:
        return count_params(self)

    def _classify(self, z: Tensor) -> Tensor:
        p = self.params
        hidden = ops.relu(ops.linear(z, p["mlp.fc1.weight"], p["mlp.fc1.bias"]))
        return ops.linear(hidden, p["mlp.fc2.weight"], p["mlp.fc2.bias"])

    def embed(self, gb: GraphBatch) -> Tensor:
        """Graph-level vectors fed to the classifier, one row per graph."""
        xc = Tensor(gb.cell_features)
        xt = Tensor(gb.tissue_features)
        taps = []
        hc, ht = xc, xt
        for conv in self.convs:
            hc, ht = hetero_conv(gb, hc, ht, conv)
            taps.append((hc, ht))
        variant = self.config.variant
        n = gb.size
        if variant == "hg":
            return ops.concat(
                [batched_readout(hc, gb.cell_graph, n), batched_readout(ht, gb.tissue_graph, n)],
                axis=1,
            )
        if variant == "hg-awa":
            levels = []
            for c, t in taps:
                levels.append(batched_readout(c, gb.cell_graph, n))
                levels.append(batched_readout(t, gb.tissue_graph, n))
            return awa_fuse(self.awa, levels)
        rows = []
        for g in range(n):
            cells = ops.slice_rows(hc, *gb.cell_range(g))
            tissues = ops.slice_rows(ht, *gb.tissue_range(g))
            if variant == "hg-transformer":
                encoded = transformer_encode(build_token_sequence(cells, tissues), self.transformer)
                rows.append(ops.reshape(readout(encoded), (1, -1)))
            else:
                cell_tok, tissue_tok = cross_attention_fuse(cells, tissues, self.cross)
                rows.append(ops.concat([cell_tok, tissue_tok], axis=1))
        return ops.concat(rows, axis=0)

    def forward(self, graphs: Union[HeteroGraph, GraphBatch]) -> Tensor:
        """Logits: (n_classes,) for a single graph, (batch, n_classes) for a batch."""
        if isinstance(graphs, HeteroGraph):
            logits = self._classify(self.embed(batch([graphs])))
            return ops.reshape(logits, (self.config.n_classes,))
        return self._classify(self.embed(graphs))

    __call__ = forward

    def predict(self, graphs) -> np.ndarray:
        gb = graphs if isinstance(graphs, GraphBatch) else batch(list(graphs))
        return np.argmax(self.forward(gb).data, axis=1)


def count_params(model: HGModel) -> int:
    """Exact number of trainable scalars."""
    return int(sum(t.size for t in model.params.values()))
