"""Adam with weight decay, the training loop, and evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import ops
from .errors import TrainingError
from .graph import HeteroGraph, batch
from .metrics import Metrics, weighted_f_score
from .model import HGModel, ModelConfig, init_parameters
from .tensor import Tape, Tensor, backward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "hg-transformer"
    n_classes: int = 6
    lr: float = 1e-4
    weight_decay: float = 5e-4
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    k: int = 5
    coupled_weight_decay: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be non-negative")
        if self.batch_size < 1 or self.epochs < 1 or self.k < 1:
            raise ValueError("batch_size, epochs and k must be positive")
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros(cls, params: Mapping[str, Tensor]) -> "AdamState":
        return cls(
            {k: np.zeros_like(p.data) for k, p in params.items()},
            {k: np.zeros_like(p.data) for k, p in params.items()},
        )


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
    betas: tuple = (0.9, 0.999),
    eps: float = 1e-8,
    decoupled: bool = True,
) -> AdamState:
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    Decoupled decay subtracts ``lr * weight_decay * theta`` after the Adam
    step; with ``decoupled=False`` the decay is added to the gradient instead.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}")
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        theta = p.data
        g = grads[name]
        if not decoupled and weight_decay:
            g = g + weight_decay * theta
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        new = theta - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        if decoupled and weight_decay:
            new = new - lr * weight_decay * theta
        p.assign(new)
    return state


@dataclass
class EpochRecord:
    epoch: int
    split: str
    loss: float
    weighted_f: float
    per_class_f: tuple

    HEADER = "epoch\tsplit\tloss\tweighted_f\tper_class_f"

    def line(self) -> str:
        per = ",".join(f"{f:.17g}" for f in self.per_class_f)
        return f"{self.epoch}\t{self.split}\t{self.loss:.17g}\t{self.weighted_f:.17g}\t{per}"


@dataclass
class TrainResult:
    model: HGModel
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_f: float = float("nan")

    def log_text(self) -> str:
        return "\n".join([EpochRecord.HEADER] + [r.line() for r in self.history]) + "\n"


def split_indices(labels: Sequence[int], seed: int, fractions=(0.7, 0.15, 0.15)) -> dict:
    """Seeded per-class shuffle into train/val/test index lists."""
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    out = {"train": [], "val": [], "test": []}
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_train = int(round(fractions[0] * idx.size))
        n_val = int(round(fractions[1] * idx.size))
        out["train"] += idx[:n_train].tolist()
        out["val"] += idx[n_train:n_train + n_val].tolist()
        out["test"] += idx[n_train + n_val:].tolist()
    return {k: sorted(v) for k, v in out.items()}


def evaluate(model: HGModel, graphs: Sequence[HeteroGraph], n_classes: int, batch_size: int = 64):
    """Mean cross-entropy, metrics and predictions over ``graphs`` (no tape)."""
    losses, preds, labels = [], [], []
    for start in range(0, len(graphs), batch_size):
        gb = batch(graphs[start:start + batch_size])
        logits = model.forward(gb)
        losses.append(float(ops.cross_entropy(logits, gb.labels).data) * gb.size)
        preds.append(np.argmax(logits.data, axis=1))
        labels.append(gb.labels)
    preds = np.concatenate(preds)
    labels = np.concatenate(labels)
    return math.fsum(losses) / len(graphs), weighted_f_score(preds, labels, n_classes), preds


def train(
    graphs: Sequence[HeteroGraph],
    cfg: TrainConfig,
    split: Optional[dict] = None,
    model_config: Optional[ModelConfig] = None,
) -> TrainResult:
    """Fit a model; the returned model holds the best-validation parameters."""
    if not graphs:
        raise ValueError("train: empty dataset")
    if any(g.label is None for g in graphs):
        raise ValueError("train: every graph needs a label")
    if split is None:
        split = split_indices([g.label for g in graphs], cfg.seed)
    train_set = [graphs[i] for i in split["train"]]
    val_set = [graphs[i] for i in split.get("val", [])] or train_set
    if not train_set:
        raise ValueError("train: empty training split")

    if model_config is None:
        model_config = ModelConfig(
            variant=cfg.variant, in_dim=graphs[0].cells.dim, n_classes=cfg.n_classes
        )
    rng = np.random.default_rng(cfg.seed)
    model = HGModel(model_config, init_parameters(model_config, rng))
    params = model.named_parameters()
    state = AdamState.zeros(params)
    result = TrainResult(model)
    best_state = model.state()

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        loss_sum, seen = [], 0
        preds, labels = [], []
        for step, start in enumerate(range(0, len(order), cfg.batch_size)):
            gb = batch([train_set[i] for i in order[start:start + cfg.batch_size]])
            with Tape() as tape:
                logits = model.forward(gb)
                loss = ops.cross_entropy(logits, gb.labels)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}")
            grads = backward(tape, loss, params.values())
            adam_step(
                params,
                {name: grads[t] for name, t in params.items()},
                state,
                cfg.lr,
                cfg.weight_decay,
                (cfg.beta1, cfg.beta2),
                cfg.adam_eps,
                decoupled=not cfg.coupled_weight_decay,
            )
            loss_sum.append(value * gb.size)
            seen += gb.size
            preds.append(np.argmax(logits.data, axis=1))
            labels.append(gb.labels)
        train_metrics = weighted_f_score(np.concatenate(preds), np.concatenate(labels), cfg.n_classes)
        result.history.append(EpochRecord(
            epoch, "train", math.fsum(loss_sum) / seen,
            train_metrics.weighted_f, tuple(train_metrics.per_class_f),
        ))
        val_loss, val_metrics, _ = evaluate(model, val_set, cfg.n_classes)
        result.history.append(EpochRecord(
            epoch, "val", val_loss, val_metrics.weighted_f, tuple(val_metrics.per_class_f)
        ))
        log.info("epoch %d train_loss %.4f val_f %.4f", epoch, result.history[-2].loss,
                 val_metrics.weighted_f)
        if not val_metrics.weighted_f <= result.best_val_f:  # also true while best is nan
            result.best_val_f = val_metrics.weighted_f
            result.best_epoch = epoch
            best_state = model.state()

    model.load_state(best_state)
    return result


def split_metrics(model: HGModel, graphs, split: dict, n_classes: int) -> Optional[Metrics]:
    test_set = [graphs[i] for i in split.get("test", [])]
    if not test_set:
        return None
    return evaluate(model, test_set, n_classes)[1]
