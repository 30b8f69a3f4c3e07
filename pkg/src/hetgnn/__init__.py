"""Heterogeneous cell/tissue graph classifiers on a small numpy autodiff engine."""

from .build import build_graph
from .graph import EntitySet, HeteroGraph, batch
from .model import VARIANTS, HGModel, ModelConfig, count_params
from .train import TrainConfig, train

__all__ = [
    "VARIANTS",
    "EntitySet",
    "HGModel",
    "HeteroGraph",
    "ModelConfig",
    "TrainConfig",
    "batch",
    "build_graph",
    "count_params",
    "train",
]
__version__ = "0.1.0"
