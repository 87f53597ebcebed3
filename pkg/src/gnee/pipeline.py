"""Batch pipeline: load -> regularize -> train -> evaluate -> export."""

from __future__ import annotations

import configparser
import dataclasses
import datetime as _dt
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import __version__
from .errors import InputError
from .evaluation import (
    ArmResult,
    ExperimentConfig,
    MetricsReport,
    SplitLabels,
    aggregate,
    make_split,
    run_gat_plain,
    run_gnee,
    split_from_ids,
)
from .gat import TrainConfig, save_checkpoint, write_embeddings
from .graph import EventGraph, LabelAssignment, load_graph, write_vertex_ids
from .regularizer import RegularizerConfig, read_features, write_features

log = logging.getLogger(__name__)

MODES = ("gnee", "gat_plain", "ablation")
FEATURE_SOURCE = {"gnee": "regularized event features", "gat_plain": "adjacency features"}

ARM_FILES = {
    "features": "features_regularized.tsv",
    "checkpoint": "model.ckpt",
    "embeddings": "embeddings.tsv",
    "metrics": "metrics.json",
    "manifest": "manifest.json",
    "vertex_ids": "vertex_ids.tsv",
}


@dataclass
class PipelineConfig:
    vertices: Path | None = None
    edges: Path | None = None
    features: Path | None = None
    out: Path = Path("gnee-out")
    dataset: str = ""
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    num_heads: int = 8
    head_dim: int = 8
    split_fraction: float = 0.2
    train_vertices: tuple[str, ...] = ()
    seeds: tuple[int, ...] = (0,)
    mode: str = "gnee"

    def __post_init__(self):
        if self.mode not in MODES:
            raise InputError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if self.num_heads < 1 or self.head_dim < 1:
            raise InputError("num_heads and head_dim must be positive")
        if not self.seeds:
            raise InputError("seed list is empty")

    @property
    def embed_dim(self) -> int:
        return self.num_heads * self.head_dim

    def experiment(self, seed: int) -> ExperimentConfig:
        return ExperimentConfig(self.regularizer, dataclasses.replace(self.train, seed=seed), self.num_heads, self.head_dim)

    def to_dict(self) -> dict:
        return {
            "paths": {
                "vertices": _path_str(self.vertices),
                "edges": _path_str(self.edges),
                "features": _path_str(self.features),
                "out": _path_str(self.out),
            },
            "dataset": self.dataset,
            "regularizer": {
                "tolerance": self.regularizer.tolerance,
                "max_iterations": self.regularizer.max_iterations,
                "unreached_policy": self.regularizer.unreached_policy.value,
            },
            "train": dataclasses.asdict(self.train),
            "model": {"num_heads": self.num_heads, "head_dim": self.head_dim, "embed_dim": self.embed_dim},
            "split": {"fraction": self.split_fraction, "train": list(self.train_vertices)},
            "run": {"seeds": list(self.seeds), "mode": self.mode},
        }


def _path_str(p):
    return None if p is None else str(p)


# ---------------------------------------------------------------------------
# config files


_KEYS = {
    "paths": {"vertices": Path, "edges": Path, "features": Path, "out": Path},
    "regularizer": {"tolerance": float, "max_iterations": int, "unreached_policy": str},
    "train": {"epochs": int, "learning_rate": float, "weight_decay": float, "dropout_rate": float, "patience": int},
    "model": {"num_heads": int, "head_dim": int},
    "split": {"fraction": float, "train": str},
    "run": {"seeds": str, "mode": str, "dataset": str},
}


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(",", " ").split())


def read_config(path: str | Path | None, overrides: Mapping[str, str] | None = None) -> PipelineConfig:
    """Build a config from an INI-style file plus ``section.key -> value`` overrides.

    Relative paths in the file resolve against the file's directory;
    relative paths in overrides resolve against the working directory.
    """
    values: dict[tuple[str, str], tuple[str, Path]] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise InputError("config file not found", path)
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise InputError(f"cannot parse config: {exc}", path) from None
        for section in parser.sections():
            if section not in _KEYS:
                raise InputError(f"unknown config section [{section}]", path)
            for key, value in parser[section].items():
                if key not in _KEYS[section]:
                    raise InputError(f"unknown key {key!r} in [{section}]", path)
                values[(section, key)] = (value, path.parent)
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in _KEYS or key not in _KEYS[section]:
            raise InputError(f"unknown setting {dotted!r}")
        values[(section, key)] = (value, Path.cwd())

    def get(section, key, default=None):
        if (section, key) not in values:
            return default
        raw, base = values[(section, key)]
        kind = _KEYS[section][key]
        try:
            if kind is Path:
                p = Path(raw).expanduser()
                return p if p.is_absolute() else base / p
            return kind(raw)
        except ValueError:
            raise InputError(f"bad value {raw!r} for {section}.{key}") from None

    d_reg, d_train = RegularizerConfig(), TrainConfig()
    try:
        reg = RegularizerConfig(
            tolerance=get("regularizer", "tolerance", d_reg.tolerance),
            max_iterations=get("regularizer", "max_iterations", d_reg.max_iterations),
            unreached_policy=get("regularizer", "unreached_policy", d_reg.unreached_policy.value),
        )
        seeds = _int_list(get("run", "seeds", "0"))
        trn = TrainConfig(
            epochs=get("train", "epochs", d_train.epochs),
            learning_rate=get("train", "learning_rate", d_train.learning_rate),
            weight_decay=get("train", "weight_decay", d_train.weight_decay),
            dropout_rate=get("train", "dropout_rate", d_train.dropout_rate),
            patience=get("train", "patience", d_train.patience),
            seed=seeds[0] if seeds else 0,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None
    train_vertices = tuple(x.strip() for x in get("split", "train", "").split(",") if x.strip())
    return PipelineConfig(
        vertices=get("paths", "vertices"),
        edges=get("paths", "edges"),
        features=get("paths", "features"),
        out=get("paths", "out", Path("gnee-out")),
        dataset=get("run", "dataset", ""),
        regularizer=reg,
        train=trn,
        num_heads=get("model", "num_heads", 8),
        head_dim=get("model", "head_dim", 8),
        split_fraction=get("split", "fraction", 0.2),
        train_vertices=train_vertices,
        seeds=seeds,
        mode=get("run", "mode", "gnee"),
    )


# ---------------------------------------------------------------------------
# helpers


def git_blob_hash(path: str | Path) -> str:
    """Content hash computed the way git names blobs."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def dump_json(path: Path, doc):
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _require(path: Path | None, what: str) -> Path:
    if path is None:
        raise InputError(f"no {what} file configured")
    if not Path(path).is_file():
        raise InputError(f"{what} file not found", path)
    return Path(path)


@dataclass
class LoadedInputs:
    graph: EventGraph
    labels: LabelAssignment
    event_features: dict[int, np.ndarray] | None
    hashes: dict[str, str]


def load_inputs(cfg: PipelineConfig, need_features: bool = True) -> LoadedInputs:
    vertices = _require(cfg.vertices, "vertices")
    edges = _require(cfg.edges, "edges")
    g, labels = load_graph(vertices, edges)
    hashes = {"vertices": git_blob_hash(vertices), "edges": git_blob_hash(edges)}
    feats = None
    if need_features:
        fpath = _require(cfg.features, "features")
        feats = read_features(fpath, g)
        hashes["features"] = git_blob_hash(fpath)
    return LoadedInputs(g, labels, feats, hashes)


def resolve_split(cfg: PipelineConfig, g: EventGraph, labels: LabelAssignment, seed: int) -> SplitLabels:
    if cfg.train_vertices:
        try:
            ids = [g.id_of(name) for name in cfg.train_vertices]
        except KeyError as exc:
            raise InputError(f"split.train: {exc.args[0]}") from None
        return split_from_ids(labels, ids, seed)
    return make_split(labels, cfg.split_fraction, seed)


def metrics_document(cfg: PipelineConfig, method: str, seed: int, arm: ArmResult, labels: LabelAssignment) -> dict:
    doc = {"dataset": cfg.dataset, "method": method, "seed": seed, "epochs_run": arm.training.epochs_run}
    doc.update(arm.report.to_dict())
    doc["class_names"] = list(labels.class_names)
    doc["num_train"] = len(arm.split.train_ids)
    doc["num_test"] = len(arm.split.test_ids)
    return doc


def write_arm(
    out: Path, cfg: PipelineConfig, inputs: LoadedInputs, method: str, seed: int, arm: ArmResult, wall_time: float
) -> dict[str, Path]:
    out.mkdir(parents=True, exist_ok=True)
    g = inputs.graph
    written = {}
    if method == "gnee":
        written["features"] = out / ARM_FILES["features"]
        write_features(written["features"], g, arm.features)
    written["checkpoint"] = out / ARM_FILES["checkpoint"]
    save_checkpoint(written["checkpoint"], arm.model)
    written["embeddings"] = out / ARM_FILES["embeddings"]
    write_embeddings(written["embeddings"], g, arm.embeddings)
    written["vertex_ids"] = out / ARM_FILES["vertex_ids"]
    write_vertex_ids(written["vertex_ids"], g)
    written["metrics"] = out / ARM_FILES["metrics"]
    dump_json(written["metrics"], metrics_document(cfg, method, seed, arm, inputs.labels))

    train_ids, test_ids = arm.split.audit()
    manifest = {
        "version": __version__,
        "config": cfg.to_dict(),
        "method": method,
        "seed": seed,
        "feature_source": FEATURE_SOURCE[method],
        "inputs": inputs.hashes,
        "split": {"train": [g.names[v] for v in train_ids], "test": [g.names[v] for v in test_ids]},
        "training": {
            "epochs_run": arm.training.epochs_run,
            "stopped_early": arm.training.stopped_early,
            "final_loss": arm.training.loss_history[-1],
        },
        "outputs": sorted(p.name for p in written.values()) + [ARM_FILES["manifest"]],
        "wall_time_s": wall_time,
        "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    reg = arm.regularization
    if reg is not None:
        manifest["regularization"] = {
            "iterations": reg.iterations,
            "residual": reg.residual,
            "converged": reg.converged,
            "unreached": [g.names[v] for v in reg.unreached],
        }
    written["manifest"] = out / ARM_FILES["manifest"]
    dump_json(written["manifest"], manifest)
    return written


def _run_arm(method: str, cfg: PipelineConfig, inputs: LoadedInputs, split: SplitLabels, seed: int) -> tuple[ArmResult, float]:
    t0 = time.perf_counter()
    exp = cfg.experiment(seed)
    if method == "gnee":
        arm = run_gnee(inputs.graph, inputs.event_features, inputs.labels, split, exp)
    else:
        log.info("training on adjacency features (no regularization)")
        arm = run_gat_plain(inputs.graph, inputs.labels, split, exp)
    return arm, time.perf_counter() - t0


@dataclass
class PipelineResult:
    arms: dict[tuple[str, int], ArmResult]
    files: list[Path]

    def reports(self, method: str) -> list[MetricsReport]:
        return [arm.report for (m, _), arm in sorted(self.arms.items()) if m == method]


def run_pipeline(cfg: PipelineConfig) -> PipelineResult:
    """Run every configured seed and method, writing one directory per arm.

    With one seed and a single method the arm files land directly in
    ``cfg.out``; otherwise under ``seed_<n>/`` and/or ``<method>/``, plus an
    ``aggregate.json`` with mean and sample std per method.
    """
    methods = ("gnee", "gat_plain") if cfg.mode == "ablation" else (cfg.mode,)
    inputs = load_inputs(cfg, need_features="gnee" in methods)
    multi_seed = len(cfg.seeds) > 1
    arms: dict[tuple[str, int], ArmResult] = {}
    files: list[Path] = []

    for seed in cfg.seeds:
        split = resolve_split(cfg, inputs.graph, inputs.labels, seed)
        seed_dir = cfg.out / f"seed_{seed}" if multi_seed else cfg.out
        for method in methods:
            arm, wall = _run_arm(method, cfg, inputs, split, seed)
            arm_dir = seed_dir / method if cfg.mode == "ablation" else seed_dir
            files += write_arm(arm_dir, cfg, inputs, method, seed, arm, wall).values()
            arms[(method, seed)] = arm
            log.info("%s seed %d: f1_macro=%.4f accuracy=%.4f", method, seed, arm.report.f1_macro, arm.report.accuracy)
        if cfg.mode == "ablation":
            a, b = arms[("gnee", seed)], arms[("gat_plain", seed)]
            if a.split.audit() != b.split.audit():
                raise AssertionError("ablation arms saw different splits")
            path = seed_dir / "ablation.json"
            dump_json(path, {"seed": seed, "gnee": a.report.to_dict(), "gat_plain": b.report.to_dict()})
            files.append(path)

    if multi_seed or cfg.mode == "ablation":
        doc = {"dataset": cfg.dataset, "seeds": list(cfg.seeds)}
        for method in methods:
            doc[method] = aggregate([arms[(method, s)].report for s in cfg.seeds])
        path = cfg.out / "aggregate.json"
        cfg.out.mkdir(parents=True, exist_ok=True)
        dump_json(path, doc)
        files.append(path)
    return PipelineResult(arms, files)

