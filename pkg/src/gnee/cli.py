"""Command-line entry point.

Exit codes: 0 success, 1 input error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DivergenceError, InputError
from .evaluation import MetricsReport, aggregate
from .gat import classify, load_checkpoint, multi_head_forward, read_embeddings, save_checkpoint, write_embeddings
from .graph import build_adjacency_features, graph_stats, load_graph, write_vertex_ids
from .pipeline import (
    ARM_FILES,
    PipelineConfig,
    _run_arm,
    dump_json,
    load_inputs,
    metrics_document,
    read_config,
    resolve_split,
    run_pipeline,
)
from .projection import emit_scatter, project_2d, separation_statistic, write_projection
from .regularizer import initialize_features, regularize, write_features

log = logging.getLogger("gnee")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="INI-style config file")
    p.add_argument("--seed", type=int, help="run a single seed (overrides run.seeds)")
    p.add_argument("--mode", choices=("gnee", "gat_plain", "ablation"))
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--vertices", type=Path)
    p.add_argument("--edges", type=Path)
    p.add_argument("--features", type=Path)
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override any config key")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gnee", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="print graph statistics")
    _common(p)
    p.add_argument("--json", action="store_true", help="print the JSON document instead of key: value lines")

    p = sub.add_parser("regularize", help="propagate event features to all vertices")
    _common(p)

    p = sub.add_parser("train", help="train a model and export embeddings")
    _common(p)

    p = sub.add_parser("eval", help="score a trained checkpoint on the held-out events")
    _common(p)
    p.add_argument("--checkpoint", type=Path, help="defaults to OUT/model.ckpt")

    p = sub.add_parser("ablation", help="regularized features vs adjacency features")
    _common(p)

    p = sub.add_parser("project", help="2-D PCA projection and SVG scatter of embeddings")
    _common(p)
    p.add_argument("--embeddings", type=Path, help="defaults to OUT/embeddings.tsv")

    p = sub.add_parser("run", help="full pipeline")
    _common(p)

    p = sub.add_parser("fixture", help="write the bundled toy dataset and config to a directory")
    p.add_argument("directory", type=Path)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config(args) -> PipelineConfig:
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise InputError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    for flag, key in (("vertices", "paths.vertices"), ("edges", "paths.edges"), ("features", "paths.features"), ("out", "paths.out"), ("mode", "run.mode")):
        if getattr(args, flag) is not None:
            overrides[key] = str(getattr(args, flag))
    if args.seed is not None:
        overrides["run.seeds"] = str(args.seed)
    return read_config(args.config, overrides)


def cmd_stats(args) -> int:
    cfg = _config(args)
    for what, path in (("vertices", cfg.vertices), ("edges", cfg.edges)):
        if path is None or not Path(path).is_file():
            raise InputError(f"{what} file not found", path)
    g, labels = load_graph(cfg.vertices, cfg.edges)
    stats = graph_stats(g)
    stats["num_classes"] = labels.num_classes
    stats["num_labeled"] = len(labels.labels)
    if args.json:
        print(json.dumps(stats, indent=2, sort_keys=True))
    else:
        for key, value in stats.items():
            if key == "avg_degree":
                value = f"{value:.2f}"
            elif isinstance(value, dict):
                value = ", ".join(f"{k}={v}" for k, v in value.items()) or "-"
            print(f"{key}: {value}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        dump_json(args.out / "stats.json", stats)
    return EXIT_OK


def cmd_regularize(args) -> int:
    cfg = _config(args)
    inputs = load_inputs(cfg, need_features=True)
    g = inputs.graph
    f0 = initialize_features(g, inputs.event_features, cfg.regularizer)
    res = regularize(g, f0, cfg.regularizer)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_features(cfg.out / ARM_FILES["features"], g, res.features)
    dump_json(
        cfg.out / "regularization.json",
        {
            "iterations": res.iterations,
            "residual": res.residual,
            "converged": res.converged,
            "unreached": [g.names[v] for v in res.unreached],
            "config": cfg.to_dict()["regularizer"],
            "inputs": inputs.hashes,
        },
    )
    print(f"sweeps: {res.iterations}  residual: {res.residual:.3g}  converged: {res.converged}  unreached: {len(res.unreached)}")
    return EXIT_OK


def _single_method(cfg: PipelineConfig) -> str:
    if cfg.mode == "ablation":
        raise InputError("this command needs --mode gnee or gat_plain")
    return cfg.mode


def cmd_train(args) -> int:
    cfg = _config(args)
    method = _single_method(cfg)
    inputs = load_inputs(cfg, need_features=method == "gnee")
    seed = cfg.seeds[0]
    split = resolve_split(cfg, inputs.graph, inputs.labels, seed)
    arm, _ = _run_arm(method, cfg, inputs, split, seed)
    cfg.out.mkdir(parents=True, exist_ok=True)
    if method == "gnee":
        write_features(cfg.out / ARM_FILES["features"], inputs.graph, arm.features)
    save_checkpoint(cfg.out / ARM_FILES["checkpoint"], arm.model)
    write_embeddings(cfg.out / ARM_FILES["embeddings"], inputs.graph, arm.embeddings)
    write_vertex_ids(cfg.out / ARM_FILES["vertex_ids"], inputs.graph)
    print(f"epochs: {arm.training.epochs_run}  final loss: {arm.training.loss_history[-1]:.4g}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    method = _single_method(cfg)
    inputs = load_inputs(cfg, need_features=method == "gnee")
    g, labels = inputs.graph, inputs.labels
    ckpt = args.checkpoint or cfg.out / ARM_FILES["checkpoint"]
    if not Path(ckpt).is_file():
        raise InputError("checkpoint not found", ckpt)
    model = load_checkpoint(ckpt)
    if method == "gnee":
        f = regularize(g, initialize_features(g, inputs.event_features, cfg.regularizer), cfg.regularizer).features
    else:
        f = build_adjacency_features(g)
    seed = cfg.seeds[0]
    split = resolve_split(cfg, g, labels, seed)
    probs = classify(model, multi_head_forward(model, f, g))
    pred = {v: int(np.argmax(probs[v])) + 1 for v in labels.labels}
    report = MetricsReport.from_predictions(pred, labels.labels, split.test_ids or split.train_ids, labels.num_classes)
    doc = {"dataset": cfg.dataset, "method": method, "seed": seed, "checkpoint": str(ckpt)}
    doc.update(report.to_dict())
    doc["class_names"] = list(labels.class_names)
    cfg.out.mkdir(parents=True, exist_ok=True)
    dump_json(cfg.out / ARM_FILES["metrics"], doc)
    print(f"f1_macro: {report.f1_macro:.4f}\naccuracy: {report.accuracy:.4f}")
    return EXIT_OK


def _summarize(result):
    methods = sorted({m for m, _ in result.arms}, key=["gnee", "gat_plain"].index)
    for method in methods:
        agg = aggregate(result.reports(method))
        print(f"{method}: f1_macro {agg['f1_macro']['display']}  accuracy {agg['accuracy']['display']}  (n={agg['n_runs']})")


def cmd_run(args) -> int:
    result = run_pipeline(_config(args))
    _summarize(result)
    return EXIT_OK


def cmd_ablation(args) -> int:
    args.mode = "ablation"
    return cmd_run(args)


def cmd_project(args) -> int:
    cfg = _config(args)
    emb_path = args.embeddings or cfg.out / ARM_FILES["embeddings"]
    if not Path(emb_path).is_file():
        raise InputError("embeddings file not found", emb_path)
    names, z = read_embeddings(emb_path)
    labels = {}
    if cfg.vertices is not None and cfg.edges is not None:
        g, la = load_graph(cfg.vertices, cfg.edges)
        row = {name: i for i, name in enumerate(names)}
        labels = {row[g.names[v]]: la.class_name(c) for v, c in la.labels.items() if g.names[v] in row}
    coords = project_2d(z)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_projection(cfg.out / "projection.tsv", names, coords)
    emit_scatter(coords, labels, cfg.out / "scatter.svg", names=names, title=cfg.dataset)
    if len(set(labels.values())) > 1:
        between, within = separation_statistic(coords, labels)
        print(f"centroid distance: {between:.4g}  within-class radius: {within:.4g}")
    return EXIT_OK


def cmd_fixture(args) -> int:
    src = resources.files("gnee") / "data" / "toy"
    args.directory.mkdir(parents=True, exist_ok=True)
    for name in ("vertices.tsv", "edges.tsv", "features.tsv", "toy.ini"):
        with resources.as_file(src / name) as p:
            shutil.copyfile(p, args.directory / name)
    print(f"wrote toy dataset to {args.directory}")
    return EXIT_OK


COMMANDS = {
    "stats": cmd_stats,
    "regularize": cmd_regularize,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablation": cmd_ablation,
    "project": cmd_project,
    "run": cmd_run,
    "fixture": cmd_fixture,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"gnee: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DivergenceError as exc:
        print(f"gnee: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"gnee: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
