"""Planted-signal synthetic cell/tissue datasets.

Each class owns a feature centroid. Cell features scatter around their
graph's class centroid; tissue features are noisy means of their member
cells. Positions live in the unit square with cells clustered around the
tissue they belong to.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .build import build_graph
from .graph import CELL, TISSUE, EntitySet

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 6
    graphs_per_class: int = 60
    cell_range: tuple = (30, 60)
    tissue_range: tuple = (5, 10)
    feature_dim: int = 512
    separation: float = 10.0  # minimum pairwise distance between class centroids
    noise: float = 1.0  # per-coordinate standard deviation of feature noise
    cell_spread: float = 0.05  # std of cell positions around their tissue
    seed: int = 0

    def __post_init__(self):
        lo_c, hi_c = self.cell_range
        lo_t, hi_t = self.tissue_range
        if self.n_classes < 2 or self.graphs_per_class < 1 or self.feature_dim < 1:
            raise ValueError("n_classes >= 2, graphs_per_class >= 1 and feature_dim >= 1 required")
        if not (1 <= lo_t <= hi_t and 1 <= lo_c <= hi_c):
            raise ValueError(f"invalid count ranges: cells {self.cell_range}, tissues {self.tissue_range}")
        if hi_t > hi_c:
            raise ValueError(
                f"tissue counts {self.tissue_range} can exceed cell counts {self.cell_range}"
            )
        if self.separation < 0 or self.noise < 0:
            raise ValueError("separation and noise must be non-negative")


@dataclass
class SynthSample:
    name: str
    label: int
    split: str
    cells: EntitySet
    tissues: EntitySet
    assignment: np.ndarray


@dataclass
class Dataset:
    graphs: list
    names: list
    split: dict = field(default_factory=dict)  # split name -> graph indices

    @property
    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs])


def class_centroids(n_classes: int, dim: int, separation: float, rng) -> np.ndarray:
    """Random centroids scaled so the closest pair is exactly ``separation`` apart."""
    raw = rng.standard_normal((n_classes, dim))
    closest = min(np.linalg.norm(raw[a] - raw[b]) for a, b in combinations(range(n_classes), 2))
    return raw * (separation / closest)


def synth_samples(spec: SynthSpec) -> list:
    rng = np.random.default_rng(spec.seed)
    centroids = class_centroids(spec.n_classes, spec.feature_dim, spec.separation, rng)
    samples = []
    for label in range(spec.n_classes):
        n = spec.graphs_per_class
        n_train = int(round(0.7 * n))
        n_val = int(round(0.15 * n))
        splits = ["train"] * n_train + ["val"] * n_val + ["test"] * (n - n_train - n_val)
        splits = [splits[i] for i in rng.permutation(n)]
        for j in range(n):
            n_t = int(rng.integers(spec.tissue_range[0], spec.tissue_range[1] + 1))
            n_c = int(rng.integers(max(spec.cell_range[0], n_t), spec.cell_range[1] + 1))
            tissue_pos = rng.uniform(0.0, 1.0, size=(n_t, 2))
            # every tissue gets at least one cell
            assignment = np.concatenate([np.arange(n_t), rng.integers(0, n_t, size=n_c - n_t)])
            assignment = assignment[rng.permutation(n_c)]
            cell_pos = np.clip(
                tissue_pos[assignment] + rng.normal(0.0, spec.cell_spread, size=(n_c, 2)), 0.0, 1.0
            )
            cell_feat = centroids[label] + spec.noise * rng.standard_normal((n_c, spec.feature_dim))
            members = np.zeros((n_t, spec.feature_dim))
            np.add.at(members, assignment, cell_feat)
            members /= np.bincount(assignment, minlength=n_t)[:, None]
            tissue_feat = members + spec.noise * rng.standard_normal((n_t, spec.feature_dim))
            samples.append(SynthSample(
                name=f"c{label}_g{j:04d}",
                label=label,
                split=splits[j],
                cells=EntitySet(CELL, cell_pos, cell_feat),
                tissues=EntitySet(TISSUE, tissue_pos, tissue_feat),
                assignment=assignment,
            ))
    return samples


def synth_generate(spec: SynthSpec, edge_mode: str = "feat-knn", k: int = 5) -> Dataset:
    """Labelled graphs plus a stratified 70/15/15 split, deterministic per seed."""
    samples = synth_samples(spec)
    graphs = [
        build_graph(s.cells, s.tissues, edge_mode, k, assignment=s.assignment, label=s.label)
        for s in samples
    ]
    split = {name: [i for i, s in enumerate(samples) if s.split == name] for name in SPLITS}
    return Dataset(graphs, [s.name for s in samples], split)
