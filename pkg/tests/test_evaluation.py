import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnee.errors import InputError
from gnee.evaluation import (
    ExperimentConfig,
    MetricsReport,
    accuracy,
    aggregate,
    confusion_matrix,
    f1_macro,
    format_mean_std,
    make_split,
    mean_std,
    per_class_f1,
    run_ablation,
    split_from_ids,
)
from gnee.gat import TrainConfig
from gnee.graph import LabelAssignment


def _labels(classes):
    k = max(classes)
    return LabelAssignment({v: c for v, c in enumerate(classes)}, tuple(f"c{i}" for i in range(1, k + 1)))


def test_split_ten_balanced():
    labels = _labels([1] * 5 + [2] * 5)
    s = make_split(labels, 0.2, seed=0)
    assert len(s.train_ids) == 2 and len(s.test_ids) == 8
    assert sorted(labels.labels[v] for v in s.train_ids) == [1, 2]


def test_split_deterministic_and_seed_sensitive():
    labels = _labels([1, 2, 3] * 20)
    assert make_split(labels, 0.2, 5).audit() == make_split(labels, 0.2, 5).audit()
    audits = {make_split(labels, 0.2, s).audit() for s in range(5)}
    assert len(audits) > 1


def test_split_many_classes_all_in_train():
    # 69 classes with a long tail: 575 events, 35 singleton classes
    sizes = [max(1, int(200 / (i + 1) ** 1.3)) for i in range(69)]
    classes = [c + 1 for c, n in enumerate(sizes) for _ in range(n)]
    labels = _labels(classes)
    n = len(classes)
    assert sizes.count(1) > 0 and math.floor(0.2 * n + 0.5) >= 69
    for seed in range(5):
        s = make_split(labels, 0.2, seed=seed)
        assert len(s.train_ids) == math.floor(0.2 * n + 0.5)
        # oracle: count the classes present in the emitted train set
        assert len({labels.labels[v] for v in s.train_ids}) == 69


def test_split_too_few_slots_for_every_class():
    sizes = [1 + (i % 5) for i in range(69)]
    classes = [c + 1 for c, n in enumerate(sizes) for _ in range(n)]
    labels = _labels(classes)
    s = make_split(labels, 0.2, seed=3)
    present = [labels.labels[v] for v in s.train_ids]
    assert len(present) == len(set(present)) == 41
    singletons = {c for c, n in enumerate(sizes, 1) if n == 1}
    assert singletons <= set(present)


def test_split_singletons_go_to_train_when_short():
    labels = _labels([1, 2, 3, 3, 3, 3, 3, 3, 3, 3])
    s = make_split(labels, 0.2, seed=1)
    assert len(s.train_ids) == 2
    assert {labels.labels[v] for v in s.train_ids} == {1, 2}


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=1, max_size=80), st.floats(0.05, 0.95), st.integers(0, 1000))
def test_split_partition_invariants(classes, fraction, seed):
    labels = _labels(classes)
    s = make_split(labels, fraction, seed)
    n = len(classes)
    assert s.train_ids.isdisjoint(s.test_ids)
    assert s.train_ids | s.test_ids == set(labels.labels)
    assert len(s.train_ids) + len(s.test_ids) == n
    assert len(s.train_ids) == min(n, max(1, math.floor(fraction * n + 0.5)))
    present = set(classes)
    if len(s.train_ids) >= len(present):
        assert {labels.labels[v] for v in s.train_ids} == present


def test_split_errors():
    with pytest.raises(InputError):
        make_split(LabelAssignment({}, ("a",)), 0.2)
    with pytest.raises(ValueError):
        make_split(_labels([1, 2]), 1.0)
    with pytest.raises(InputError):
        split_from_ids(_labels([1, 2]), [7])


def test_accuracy_examples():
    truth = {0: 1, 1: 2, 2: 1, 3: 2}
    assert accuracy(truth, truth, truth) == 1.0
    assert accuracy({0: 2, 1: 1, 2: 2, 3: 1}, truth, truth) == 0.0
    assert accuracy({0: 1, 1: 2, 2: 1, 3: 1}, truth, truth) == 0.75
    with pytest.raises(InputError):
        accuracy(truth, truth, [])


def test_f1_examples():
    ids = range(4)
    truth = dict(enumerate([1, 1, 2, 2]))
    pred = dict(enumerate([1, 2, 2, 2]))
    cm = confusion_matrix(pred, truth, ids, 2)
    np.testing.assert_allclose(per_class_f1(cm), [2 / 3, 0.8], rtol=0, atol=1e-15)
    assert f1_macro(pred, truth, ids, 2) == pytest.approx(11 / 15, abs=1e-15)
    assert f1_macro(dict.fromkeys(ids, 1), truth, ids, 2) == pytest.approx(1 / 3, abs=1e-15)
    for k in (2, 3, 7):
        assert f1_macro(truth, truth, ids, k) == (1.0 if k == 2 else 2 / k)


def test_absent_class_contributes_zero():
    truth = {0: 1, 1: 2}
    assert per_class_f1(confusion_matrix(truth, truth, [0, 1], 3)).tolist() == [1.0, 1.0, 0.0]


def test_f1_equals_accuracy_for_diagonal_confusion():
    truth = dict(enumerate([1, 2, 3, 1, 2, 3]))
    assert f1_macro(truth, truth, truth, 3) == accuracy(truth, truth, truth) == 1.0


def test_balanced_symmetric_confusion_gives_equal_f1():
    truth = dict(enumerate([1, 1, 1, 2, 2, 2]))
    pred = dict(enumerate([1, 1, 2, 2, 2, 1]))
    cm = confusion_matrix(pred, truth, truth, 2)
    assert cm[0, 1] == cm[1, 0] and cm[0, 0] == cm[1, 1]
    f1 = per_class_f1(cm)
    assert f1[0] == f1[1]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_metrics_are_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    n, k = int(rng.integers(1, 30)), int(rng.integers(1, 5))
    truth = {i: int(c) for i, c in enumerate(rng.integers(1, k + 1, n))}
    pred = {i: int(c) for i, c in enumerate(rng.integers(1, k + 1, n))}
    ids = list(range(n))
    shuffled = [ids[i] for i in rng.permutation(n)]
    assert accuracy(pred, truth, ids) == accuracy(pred, truth, shuffled)
    assert f1_macro(pred, truth, ids, k) == f1_macro(pred, truth, shuffled, k)


def test_confusion_rejects_out_of_range():
    with pytest.raises(InputError):
        confusion_matrix({0: 3}, {0: 1}, [0], 2)


def test_report_and_aggregate():
    truth = dict(enumerate([1, 1, 2, 2]))
    pred = dict(enumerate([1, 2, 2, 2]))
    r = MetricsReport.from_predictions(pred, truth, truth, 2)
    assert r.accuracy == 0.75 and r.confusion == ((1, 1), (0, 2))
    assert r.to_dict()["per_class_f1"] == list(r.per_class_f1)
    assert mean_std([1.0]) == (1.0, 0.0)
    mu, sd = mean_std([1.0, 2.0, 3.0])
    assert (mu, sd) == (2.0, 1.0)
    assert format_mean_std([0.7, 0.788]) == "0.744 ± 0.06"
    agg = aggregate([r, r])
    assert agg["n_runs"] == 2 and agg["accuracy"]["std"] == 0.0


def test_ablation_on_toy(toy, toy_train_ids):
    g, labels, feats = toy
    split = split_from_ids(labels, toy_train_ids)
    cfg = ExperimentConfig(train=TrainConfig(epochs=200, learning_rate=0.05, dropout_rate=0.0), num_heads=2, head_dim=2)
    arms = run_ablation(g, feats, labels, split, cfg)
    assert set(arms) == {"gnee", "gat_plain"}
    assert arms["gnee"].report.accuracy == 1.0
    assert len(split.test_ids) == 6
    assert arms["gnee"].split.audit() == arms["gat_plain"].split.audit()
    assert arms["gat_plain"].features.shape == (g.num_vertices, g.num_vertices)
