"""Command-line entry point: ``hetgnn <subcommand> [flags]``.

Subcommands: synth, build-graph, train, eval, params, gradcheck. Every run
prints its resolved configuration first and, on success, a final
machine-readable line starting with ``RESULT``. Errors produce a single
line on stderr and exit code 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import backend, ops
from .build import EDGE_MODES, build_graph
from .errors import HetGNNError
from .gradcheck import finite_diff_check
from .graph import CELL, TISSUE, EntitySet
from .io import (
    load_checkpoint,
    load_entities,
    load_graph,
    read_manifest,
    read_predictions,
    save_checkpoint,
    save_entities,
    save_graph,
    write_manifest,
    write_predictions,
)
from .metrics import weighted_f_score
from .model import VARIANTS, HGModel, ModelConfig
from .synth import SynthSpec, synth_samples
from .train import TrainConfig, evaluate, split_indices, train

MANIFEST = "manifest.csv"


class CliError(HetGNNError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(1)


def _default_seed() -> int:
    raw = os.environ.get("HGG_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"HGG_SEED must be an integer, got {raw!r}") from None


def _print_config(command: str, cfg: dict) -> None:
    shown = {k: v for k, v in cfg.items() if not callable(v)}
    print(f"config {command} " + json.dumps(shown, sort_keys=True, default=str))


def _load_dataset(graph_dir: Path):
    rows = read_manifest(graph_dir / MANIFEST)
    if not rows:
        raise CliError(f"{graph_dir / MANIFEST}: no samples")
    graphs = []
    for name, label, _ in rows:
        g = load_graph(graph_dir / f"{name}.hgg")
        if g.label != label:
            raise CliError(f"{name}: graph label {g.label} disagrees with manifest label {label}")
        graphs.append(g)
    split = {s: [i for i, r in enumerate(rows) if r[2] == s] for s in ("train", "val", "test")}
    if not split["train"]:
        split = None
    return rows, graphs, split


def cmd_synth(args) -> str:
    spec = SynthSpec(
        n_classes=args.n_classes,
        graphs_per_class=args.graphs_per_class,
        cell_range=tuple(args.cells),
        tissue_range=tuple(args.tissues),
        feature_dim=args.dim,
        separation=args.separation,
        noise=args.noise,
        seed=args.seed,
    )
    _print_config("synth", {**vars(args), "spec": spec.__dict__})
    out = Path(args.out)
    samples = synth_samples(spec)
    for s in samples:
        save_entities(out / f"{s.name}.cells.csv", s.cells, s.assignment)
        save_entities(out / f"{s.name}.tissues.csv", s.tissues)
    write_manifest(out / MANIFEST, [(s.name, s.label, s.split) for s in samples])
    return f"samples={len(samples)} out={out}"


def cmd_build_graph(args) -> str:
    _print_config("build-graph", vars(args))
    src, out = Path(args.input), Path(args.out)
    rows = read_manifest(src / MANIFEST)
    n_edges = {"cell->cell": 0, "tissue->tissue": 0, "cell->tissue": 0}
    for name, label, _ in rows:
        cells, assignment = load_entities(src / f"{name}.cells.csv")
        tissues, _ = load_entities(src / f"{name}.tissues.csv")
        if cells.kind != CELL or tissues.kind != TISSUE:
            raise CliError(f"{name}: expected a cell file and a tissue file")
        g = build_graph(cells, tissues, args.edge_mode, args.k, assignment, label)
        for rel, e in g.edges.items():
            n_edges[rel] += len(e)
        save_graph(out / f"{name}.hgg", g)
    write_manifest(out / MANIFEST, rows)
    counts = " ".join(f"{rel}={n}" for rel, n in n_edges.items())
    return f"graphs={len(rows)} edge_mode={args.edge_mode} k={args.k} {counts}"


def cmd_train(args) -> str:
    graph_dir = Path(args.graphs)
    rows, graphs, split = _load_dataset(graph_dir)
    n_classes = args.n_classes or int(max(r[1] for r in rows)) + 1
    cfg = TrainConfig(
        variant=args.variant,
        n_classes=n_classes,
        lr=args.lr,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        k=args.k,
        coupled_weight_decay=args.coupled_weight_decay,
    )
    if split is None:
        split = split_indices([g.label for g in graphs], cfg.seed)
    _print_config("train", {**vars(args), "n_classes": n_classes, "backend": backend.NAME})
    result = train(graphs, cfg, split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.tsv").write_text(result.log_text(), encoding="utf-8")
    save_checkpoint(out / "model.hgc", result.model, {"best_epoch": result.best_epoch})
    for rec in result.history:
        print(rec.line())
    summary = f"variant={cfg.variant} best_epoch={result.best_epoch} val_weighted_f={result.best_val_f:.6f}"
    if split.get("test"):
        _, test_m, _ = evaluate(result.model, [graphs[i] for i in split["test"]], n_classes)
        summary += f" test_weighted_f={test_m.weighted_f:.6f}"
    return summary


def _print_metrics(m) -> None:
    for c, (f, s) in enumerate(zip(m.per_class_f, m.support)):
        print(f"class {c}\tf={f:.6f}\tsupport={int(s)}")
    print(f"weighted_f\t{m.weighted_f:.17g}")


def cmd_eval(args) -> str:
    _print_config("eval", vars(args))
    if args.predictions:
        if args.checkpoint or args.graphs:
            raise CliError("--predictions cannot be combined with --checkpoint/--graphs")
        preds, labels = read_predictions(args.predictions)
        if not preds.size:
            raise CliError(f"{args.predictions}: no predictions")
        n_classes = args.n_classes or int(max(preds.max(), labels.max())) + 1
        metrics = weighted_f_score(preds, labels, n_classes)
    else:
        if not (args.checkpoint and args.graphs):
            raise CliError("eval needs --predictions, or both --checkpoint and --graphs")
        model = load_checkpoint(args.checkpoint)
        rows, graphs, split = _load_dataset(Path(args.graphs))
        if args.split != "all":
            if split is None or not split.get(args.split):
                raise CliError(f"manifest has no '{args.split}' samples")
            graphs = [graphs[i] for i in split[args.split]]
        n_classes = model.config.n_classes
        _, metrics, preds = evaluate(model, graphs, n_classes)
        if args.save_predictions:
            write_predictions(args.save_predictions, preds, [g.label for g in graphs])
    _print_metrics(metrics)
    return f"n={int(metrics.support.sum())} weighted_f={metrics.weighted_f:.17g}"


def _model_config(args) -> ModelConfig:
    return ModelConfig(
        variant=args.variant,
        in_dim=args.in_dim,
        hidden=args.hidden,
        n_classes=args.n_classes,
        heads=args.heads,
        ffn_dim=args.ffn_dim,
        mlp_hidden=args.mlp_hidden,
        aggregation=args.aggregation,
    )


def cmd_params(args) -> str:
    cfg = _model_config(args)
    _print_config("params", cfg.to_dict())
    model = HGModel(cfg, seed=args.seed)
    for name, t in model.named_parameters().items():
        print(f"{name}\t{'x'.join(map(str, t.shape))}\t{t.size}")
    total = model.count_params()
    return f"variant={cfg.variant} params={total} millions={total / 1e6:.3f}"


def cmd_gradcheck(args) -> str:
    cfg = _model_config(args)
    _print_config("gradcheck", {**cfg.to_dict(), "seed": args.seed, "eps": args.eps,
                                "cells": args.cells, "tissues": args.tissues})
    rng = np.random.default_rng(args.seed)
    model = HGModel(cfg, seed=args.seed)
    cells = EntitySet(CELL, rng.uniform(size=(args.cells, 2)),
                      rng.uniform(-1, 1, size=(args.cells, cfg.in_dim)))
    tissues = EntitySet(TISSUE, rng.uniform(size=(args.tissues, 2)),
                        rng.uniform(-1, 1, size=(args.tissues, cfg.in_dim)))
    label = int(rng.integers(cfg.n_classes))
    graph = build_graph(cells, tissues, "feat-knn", args.k, label=label)
    result = finite_diff_check(
        lambda: ops.cross_entropy(model.forward(graph), label),
        model.named_parameters(),
        eps=args.eps,
        max_entries=args.max_entries,
        rng=rng,
    )
    status = "ok" if result.max_rel_error < args.tol else "FAIL"
    print(f"checked {result.n_checked} entries; worst {result.worst_param}{list(result.worst_index or [])}")
    line = f"variant={cfg.variant} max_rel_error={result.max_rel_error:.3e} tol={args.tol:g} {status}"
    if status != "ok":
        raise CliError(line)
    return line


def _add_model_flags(p, in_dim, hidden, heads, ffn_dim, mlp_hidden) -> None:
    p.add_argument("--variant", choices=VARIANTS, default="hg-transformer")
    p.add_argument("--n-classes", type=int, default=6)
    p.add_argument("--in-dim", type=int, default=in_dim)
    p.add_argument("--hidden", type=int, default=hidden)
    p.add_argument("--heads", type=int, default=heads)
    p.add_argument("--ffn-dim", type=int, default=ffn_dim)
    p.add_argument("--mlp-hidden", type=int, default=mlp_hidden)
    p.add_argument("--aggregation", choices=("sum", "mean"), default="sum")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hetgnn", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a planted-signal entity dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-classes", type=int, default=6)
    p.add_argument("--graphs-per-class", type=int, default=60)
    p.add_argument("--cells", type=int, nargs=2, default=(30, 60), metavar=("MIN", "MAX"))
    p.add_argument("--tissues", type=int, nargs=2, default=(5, 10), metavar=("MIN", "MAX"))
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-graph", help="build heterogeneous graphs from entity files")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--edge-mode", choices=sorted(EDGE_MODES), default="feat-knn")
    p.add_argument("--k", type=int, default=5)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="train a model variant")
    p.add_argument("--graphs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=VARIANTS, default="hg-transformer")
    p.add_argument("--n-classes", type=int, default=None)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--coupled-weight-decay", action="store_true")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--k", type=int, default=5, help="recorded only; edges are built by build-graph")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-class and weighted F-scores")
    p.add_argument("--checkpoint")
    p.add_argument("--graphs")
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--save-predictions")
    p.add_argument("--predictions", help="CSV with pred,label columns")
    p.add_argument("--n-classes", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("params", help="count trainable parameters")
    _add_model_flags(p, 512, 256, 4, 512, 128)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check on a random graph")
    _add_model_flags(p, 16, 16, 2, 32, 16)
    p.add_argument("--cells", type=int, default=8)
    p.add_argument("--tissues", type=int, default=3)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-entries", type=int, default=None,
                   help="sample this many entries per tensor instead of all")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "seed", 0) is None:
            args.seed = _default_seed()
        with threadpool_limits(limits=args.threads):
            summary = args.func(args)
    except (HetGNNError, ValueError, OSError) as exc:
        msg = " ".join(str(exc).split())
        sys.stderr.write(f"hetgnn {args.command}: error: {msg}\n")
        return 1
    print(f"RESULT {args.command} {summary}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
