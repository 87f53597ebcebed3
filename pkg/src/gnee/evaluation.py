"""Semi-supervised splits, classification metrics and the regularization ablation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InputError
from .gat import GatModel, TrainConfig, TrainResult, classify, multi_head_forward, train
from .graph import EventGraph, LabelAssignment, build_adjacency_features
from .regularizer import RegularizerConfig, initialize_features, regularize
from .rng import stream


@dataclass(frozen=True)
class SplitLabels:
    train_ids: frozenset[int]
    test_ids: frozenset[int]
    seed: int

    def audit(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        return tuple(sorted(self.train_ids)), tuple(sorted(self.test_ids))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def make_split(labels: LabelAssignment, fraction: float = 0.2, seed: int = 0) -> SplitLabels:
    """Stratified random split of the labeled events.

    ``round(fraction * n)`` vertices (at least one) go to train. When there
    are enough of them every present class gets one, and singleton classes
    always land in train; the rest is allotted by largest remainder.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie strictly between 0 and 1")
    if not labels.labels:
        raise InputError("no labeled vertices to split")
    by_class: dict[int, list[int]] = {}
    for v, c in sorted(labels.labels.items()):
        by_class.setdefault(c, []).append(v)
    classes = sorted(by_class)
    counts = {c: len(by_class[c]) for c in classes}
    n = sum(counts.values())
    n_train = min(n, max(1, _round_half_up(fraction * n)))
    rng = stream(seed, "split")

    if n_train >= len(classes):
        ideal = {c: n_train * counts[c] / n for c in classes}
        alloc = {c: min(counts[c], max(1, math.floor(ideal[c]))) for c in classes}
        while sum(alloc.values()) > n_train:
            c = max((c for c in classes if alloc[c] > 1), key=lambda c: (alloc[c] - ideal[c], -c))
            alloc[c] -= 1
        while sum(alloc.values()) < n_train:
            c = max((c for c in classes if alloc[c] < counts[c]), key=lambda c: (ideal[c] - alloc[c], -c))
            alloc[c] += 1
    else:
        singletons = [c for c in classes if counts[c] == 1]
        others = [c for c in classes if counts[c] > 1]
        others = [others[i] for i in rng.permutation(len(others))]
        chosen = set((singletons + others)[:n_train])
        alloc = {c: int(c in chosen) for c in classes}

    train_ids: set[int] = set()
    for c in classes:
        members = by_class[c]
        picked = rng.permutation(len(members))[: alloc[c]]
        train_ids.update(members[i] for i in picked)
    test_ids = set(labels.labels) - train_ids
    return SplitLabels(frozenset(train_ids), frozenset(test_ids), seed)


def split_from_ids(labels: LabelAssignment, train_ids: Iterable[int], seed: int = 0) -> SplitLabels:
    train_ids = frozenset(train_ids)
    stray = [v for v in train_ids if v not in labels.labels]
    if stray:
        raise InputError(f"train vertices {stray[:5]} carry no label")
    return SplitLabels(train_ids, frozenset(labels.labels) - train_ids, seed)


# ---------------------------------------------------------------------------
# metrics


def _aligned(pred: Mapping[int, int], truth: Mapping[int, int], ids) -> tuple[np.ndarray, np.ndarray]:
    ids = list(ids)
    if not ids:
        raise InputError("cannot score an empty id set")
    return np.array([pred[i] for i in ids]), np.array([truth[i] for i in ids])


def accuracy(pred: Mapping[int, int], truth: Mapping[int, int], ids: Iterable[int]) -> float:
    p, t = _aligned(pred, truth, ids)
    return float(np.mean(p == t))


def confusion_matrix(pred: Mapping[int, int], truth: Mapping[int, int], ids: Iterable[int], num_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class (ids ``1..K``)."""
    p, t = _aligned(pred, truth, ids)
    for arr in (p, t):
        if arr.min() < 1 or arr.max() > num_classes:
            raise InputError(f"class ids must lie in 1..{num_classes}")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (t - 1, p - 1), 1)
    return cm


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    # a class never predicted and never true contributes 0
    return np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)


def f1_macro(pred: Mapping[int, int], truth: Mapping[int, int], ids: Iterable[int], num_classes: int) -> float:
    return float(np.mean(per_class_f1(confusion_matrix(pred, truth, ids, num_classes))))


@dataclass(frozen=True)
class MetricsReport:
    f1_macro: float
    accuracy: float
    per_class_f1: tuple[float, ...]
    confusion: tuple[tuple[int, ...], ...]

    @classmethod
    def from_predictions(cls, pred, truth, ids, num_classes: int) -> "MetricsReport":
        ids = sorted(ids)
        cm = confusion_matrix(pred, truth, ids, num_classes)
        f1 = per_class_f1(cm)
        return cls(
            f1_macro=float(np.mean(f1)),
            accuracy=float(np.trace(cm) / cm.sum()),
            per_class_f1=tuple(float(x) for x in f1),
            confusion=tuple(tuple(int(x) for x in row) for row in cm),
        )

    def to_dict(self) -> dict:
        return {
            "f1_macro": self.f1_macro,
            "accuracy": self.accuracy,
            "per_class_f1": list(self.per_class_f1),
            "confusion": [list(r) for r in self.confusion],
        }


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def format_mean_std(values: Sequence[float]) -> str:
    mu, sd = mean_std(values)
    return f"{mu:.3f} ± {sd:.2f}"


def aggregate(reports: Sequence[MetricsReport]) -> dict:
    out: dict = {"n_runs": len(reports)}
    for key in ("f1_macro", "accuracy"):
        vals = [getattr(r, key) for r in reports]
        mu, sd = mean_std(vals)
        out[key] = {"mean": mu, "std": sd, "display": format_mean_std(vals)}
    return out


# ---------------------------------------------------------------------------
# experiment arms


@dataclass(frozen=True)
class ExperimentConfig:
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    num_heads: int = 8
    head_dim: int = 8

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, train=replace(self.train, seed=seed))


@dataclass
class ArmResult:
    features: np.ndarray
    training: TrainResult
    embeddings: np.ndarray
    probabilities: np.ndarray
    predictions: dict[int, int]
    report: MetricsReport
    split: SplitLabels
    regularization: object = None

    @property
    def model(self) -> GatModel:
        return self.training.model


def fit_and_evaluate(
    features: np.ndarray, g: EventGraph, labels: LabelAssignment, split: SplitLabels, cfg: ExperimentConfig
) -> ArmResult:
    """Train on ``split.train_ids`` and score the held-out labeled events."""
    model = GatModel.init(features.shape[1], cfg.num_heads, cfg.head_dim, labels.num_classes, seed=cfg.train.seed)
    result = train(model, features, g, labels, split.train_ids, cfg.train)
    z = multi_head_forward(result.model, features, g)
    probs = classify(result.model, z)
    pred_all = np.argmax(probs, axis=1) + 1
    predictions = {v: int(pred_all[v]) for v in labels.labels}
    eval_ids = split.test_ids or split.train_ids
    report = MetricsReport.from_predictions(predictions, labels.labels, eval_ids, labels.num_classes)
    return ArmResult(features, result, z, probs, predictions, report, split)


def regularized_features(g: EventGraph, event_features: Mapping[int, Sequence[float]], cfg: RegularizerConfig):
    f0 = initialize_features(g, event_features, cfg)
    return regularize(g, f0, cfg)


def run_gnee(g, event_features, labels, split, cfg: ExperimentConfig) -> ArmResult:
    reg = regularized_features(g, event_features, cfg.regularizer)
    arm = fit_and_evaluate(np.asarray(reg.features), g, labels, split, cfg)
    arm.regularization = reg
    return arm


def run_gat_plain(g, labels, split, cfg: ExperimentConfig) -> ArmResult:
    return fit_and_evaluate(build_adjacency_features(g), g, labels, split, cfg)


def run_ablation(
    g: EventGraph,
    event_features: Mapping[int, Sequence[float]],
    labels: LabelAssignment,
    split: SplitLabels,
    cfg: ExperimentConfig = ExperimentConfig(),
) -> dict[str, ArmResult]:
    """Same split, seed and architecture on regularized features vs adjacency rows."""
    return {
        "gnee": run_gnee(g, event_features, labels, split, cfg),
        "gat_plain": run_gat_plain(g, labels, split, cfg),
    }
