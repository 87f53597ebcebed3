import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnee.errors import DivergenceError, InputError
from gnee.gat import (
    AttentionHead,
    GatModel,
    TrainConfig,
    attention_coefficients,
    attention_logit,
    classify,
    elu,
    extract_head_features,
    gradients,
    head_forward,
    load_checkpoint,
    masked_loss,
    multi_head_forward,
    read_embeddings,
    save_checkpoint,
    softmax,
    train,
    write_embeddings,
)
from gnee.graph import EVENT, LabelAssignment, VertexKind, build_graph

from conftest import central_differences, max_relative_error, path, random_instance

IDENTITY_1D = AttentionHead(np.array([[1.0]]), np.array([1.0, 1.0]), 0.2)


def test_attention_logit_examples():
    zero = AttentionHead(np.eye(2), np.zeros(4))
    assert attention_logit(zero, [1, 2], [3, -4]) == 0.0
    assert attention_logit(IDENTITY_1D, [2], [3]) == 5.0
    assert attention_logit(IDENTITY_1D, [-2], [-3]) == pytest.approx(-1.0, abs=1e-15)
    with pytest.raises(InputError):
        attention_logit(IDENTITY_1D, [1, 2], [3])


def test_attention_coefficients_examples():
    zero = AttentionHead(np.eye(1), np.zeros(2))
    np.testing.assert_allclose(attention_coefficients(zero, [1.0], [[1.0], [5.0]]), [0.5, 0.5])
    assert attention_coefficients(zero, [1.0], [[2.0]]).tolist() == [1.0]
    # logits [1, 0]: a = [0, 1], A = [1], neighbours z = 1 and z = 0
    head = AttentionHead(np.eye(1), np.array([0.0, 1.0]))
    e = math.e
    np.testing.assert_allclose(attention_coefficients(head, [0.0], [[1.0], [0.0]]), [e / (1 + e), 1 / (1 + e)], atol=1e-15)
    np.testing.assert_allclose(attention_coefficients(head, [0.0], [[1.0], [0.0]]), [0.7311, 0.2689], atol=5e-5)


def test_head_forward_uniform_two_neighbours():
    g = build_graph([("a", EVENT), ("b", EVENT)], [("a", "b")])
    head = AttentionHead(np.eye(2), np.zeros(4))
    f = np.array([[1.0, 0.0], [0.0, 2.0]])
    z = head_forward(head, f, g, activation=lambda x: x)
    np.testing.assert_allclose(z[0], [0.5, 1.0])


def test_head_forward_isolated_and_zero():
    g = build_graph([("a", EVENT), ("b", EVENT), ("c", EVENT)], [("a", "b")])
    head = AttentionHead(np.eye(2), np.zeros(4))
    f = np.array([[1.0, 0.0], [0.0, 2.0], [-0.5, 3.0]])
    np.testing.assert_allclose(head_forward(head, f, g)[2], elu(f[2]))
    rng = np.random.default_rng(0)
    head = AttentionHead(rng.normal(size=(3, 2)), rng.normal(size=6))
    assert np.all(head_forward(head, np.zeros((3, 2)), g) == 0.0)
    with pytest.raises(InputError):
        head_forward(head, np.zeros((3, 5)), g)


def test_multi_head_shapes_and_concat():
    g = path(4)
    f = np.random.default_rng(1).normal(size=(4, 3))
    model = GatModel.init(3, 2, 2, 2, seed=3)
    z = multi_head_forward(model, f, g)
    assert z.shape == (4, 4)
    np.testing.assert_array_equal(np.hstack([extract_head_features(model, f, g, c) for c in range(2)]), z)
    single = GatModel.init(3, 1, 2, 2, seed=3)
    np.testing.assert_array_equal(multi_head_forward(single, f, g), head_forward(single.head(0), f, g))
    twin = GatModel.from_heads([model.head(0), model.head(0)], np.zeros((2, 4)), np.zeros(2))
    h0 = head_forward(model.head(0), f, g)
    np.testing.assert_array_equal(multi_head_forward(twin, f, g), np.hstack([h0, h0]))
    with pytest.raises(IndexError):
        extract_head_features(model, f, g, 2)


def test_classify_examples():
    model = GatModel.init(2, 1, 2, 3, seed=0).with_parameters({"Wc": np.zeros((3, 2)), "bc": np.zeros(3)})
    np.testing.assert_allclose(classify(model, np.ones((4, 2))), np.full((4, 3), 1 / 3))
    np.testing.assert_allclose(softmax([math.log(2), 0.0]), [2 / 3, 1 / 3], atol=1e-15)
    rng = np.random.default_rng(5)
    model = GatModel.init(2, 1, 2, 4, seed=1)
    z = rng.normal(size=(6, 2))
    shifted = model.with_parameters({"bc": model.bc + 17.0})
    assert np.array_equal(classify(model, z).argmax(1), classify(shifted, z).argmax(1))
    with pytest.raises(InputError):
        classify(model, np.ones((2, 3)))
    sig = classify(model, z, activation="sigmoid")
    assert np.all((sig > 0) & (sig < 1))


def test_masked_loss_examples():
    labels = LabelAssignment({0: 1, 1: 2}, ("a", "b", "c"))
    assert masked_loss(np.array([[1.0, 0, 0], [0, 1.0, 0]]), labels, {0, 1}) == 0.0
    assert masked_loss(np.full((2, 3), 1 / 3), labels, {0, 1}) == pytest.approx(math.log(3), abs=1e-15)
    probs = np.array([[0.5, 0.25, 0.25], [0.5, 0.25, 0.25]])
    assert masked_loss(probs, labels, {0, 1}) == pytest.approx(1.5 * math.log(2), abs=1e-15)
    with pytest.raises(InputError):
        masked_loss(probs, labels, set())


def _five_vertex_case():
    verts = [("e0", EVENT), ("e1", EVENT), ("e2", EVENT), ("c0", VertexKind.component("org")), ("c1", VertexKind.component("loc"))]
    edges = [("e0", "c0"), ("e1", "c0"), ("e1", "c1"), ("e2", "c1"), ("e0", "e2")]
    g = build_graph(verts, edges)
    rng = np.random.default_rng(11)
    f = rng.normal(size=(5, 3))
    labels = LabelAssignment({g.id_of("e0"): 1, g.id_of("e1"): 2, g.id_of("e2"): 1}, ("x", "y"))
    model = GatModel.init(3, 2, 3, 2, seed=4)
    model = model.with_parameters({k: v + 0.3 * rng.normal(size=v.shape) for k, v in model.parameters().items()})
    return g, f, labels, model


def test_gradients_match_finite_differences():
    g, f, labels, model = _five_vertex_case()
    mask = list(labels.labels)
    analytic = gradients(model, f, g, labels, mask)
    assert set(analytic) == set(model.parameters())
    assert max_relative_error(analytic, central_differences(model, f, g, labels, mask)) < 1e-4


def test_gradient_vanishes_at_saturated_minimum():
    g = build_graph([("a", EVENT), ("b", EVENT)], [])
    f = np.array([[1.0, 0.0], [0.0, 1.0]])
    labels = LabelAssignment({0: 1, 1: 2}, ("x", "y"))
    head = AttentionHead(np.eye(2), np.zeros(4))
    model = GatModel.from_heads([head], 60.0 * np.array([[1.0, -1.0], [-1.0, 1.0]]), np.zeros(2))
    probs = classify(model, multi_head_forward(model, f, g))
    assert masked_loss(probs, labels, [0, 1]) < 1e-12
    grads = gradients(model, f, g, labels, [0, 1])
    assert math.sqrt(sum(float(np.sum(v**2)) for v in grads.values())) < 1e-6


def test_gradients_invariant_under_vertex_relabeling():
    g, f, labels, model = _five_vertex_case()
    perm = {"e0": "z9", "e1": "a1", "e2": "m5", "c0": "b2", "c1": "q7"}
    verts = [(perm[n], k) for n, k in zip(g.names, g.kinds)]
    edges = [(perm[g.names[u]], perm[g.names[v]]) for u, v in g.edges]
    g2 = build_graph(verts, edges)
    new_id = [g2.id_of(perm[n]) for n in g.names]
    f2 = np.zeros_like(f)
    f2[new_id] = f
    labels2 = LabelAssignment({new_id[v]: c for v, c in labels.labels.items()}, labels.class_names)
    a = gradients(model, f, g, labels, labels.labels)
    b = gradients(model, f2, g2, labels2, labels2.labels)
    for k in a:
        np.testing.assert_allclose(a[k], b[k], rtol=1e-12, atol=1e-14)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_gradients_random_instances(seed):
    g, f, labels, events, model = random_instance(seed)
    analytic = gradients(model, f, g, labels, events)
    assert max_relative_error(analytic, central_differences(model, f, g, labels, events)) < 1e-4


def test_locality_one_hop():
    g = path(5)
    rng = np.random.default_rng(2)
    f = rng.normal(size=(5, 3))
    model = GatModel.init(3, 2, 2, 2, seed=0)
    z = multi_head_forward(model, f, g)
    f2 = f.copy()
    f2[4] += 10.0  # vertex 4 is two hops from vertex 2
    z2 = multi_head_forward(model, f2, g)
    np.testing.assert_array_equal(z[:3], z2[:3])
    assert not np.allclose(z[3], z2[3])


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31), st.floats(-50, 50))
def test_coefficient_invariants(seed, shift):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 12))
    logits = rng.normal(scale=5.0, size=k)
    alpha = softmax(logits)
    assert np.all(alpha >= 0) and abs(alpha.sum() - 1) <= 1e-9
    np.testing.assert_allclose(softmax(logits + shift), alpha, rtol=0, atol=1e-12)


def test_train_toy_reaches_low_loss(toy, toy_train_ids):
    g, labels, feats = toy
    from gnee.regularizer import initialize_features, regularize

    f = regularize(g, initialize_features(g, feats)).features
    model = GatModel.init(2, 2, 2, 2, seed=0)
    cfg = TrainConfig(epochs=200, learning_rate=0.05, dropout_rate=0.0, seed=0)
    res = train(model, f, g, labels, toy_train_ids, cfg)
    assert res.loss_history[-1] < 0.01


def test_zero_learning_rate_is_a_no_op(toy, toy_train_ids):
    g, labels, feats = toy
    f = np.vstack([feats.get(v, np.zeros(2)) for v in range(g.num_vertices)])
    model = GatModel.init(2, 2, 2, 2, seed=1)
    res = train(model, f, g, labels, toy_train_ids, TrainConfig(epochs=20, learning_rate=0.0, dropout_rate=0.5, seed=1))
    for k, v in model.parameters().items():
        np.testing.assert_array_equal(res.model.parameters()[k], v)
    assert len(set(res.loss_history)) == 1


def test_training_is_deterministic(toy, toy_train_ids):
    g, labels, feats = toy
    f = np.vstack([feats.get(v, np.zeros(2)) for v in range(g.num_vertices)])
    cfg = TrainConfig(epochs=50, dropout_rate=0.6, seed=9)
    runs = [train(GatModel.init(2, 2, 2, 2, seed=9), f, g, labels, toy_train_ids, cfg) for _ in range(2)]
    assert np.array(runs[0].loss_history).tobytes() == np.array(runs[1].loss_history).tobytes()
    for k in runs[0].model.parameters():
        assert runs[0].model.parameters()[k].tobytes() == runs[1].model.parameters()[k].tobytes()


def test_early_stopping_on_plateau(toy, toy_train_ids):
    g, labels, feats = toy
    f = np.vstack([feats.get(v, np.zeros(2)) for v in range(g.num_vertices)])
    res = train(GatModel.init(2, 1, 2, 2), f, g, labels, toy_train_ids, TrainConfig(epochs=500, learning_rate=0.0, patience=5))
    assert res.stopped_early and res.epochs_run == 6


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises(toy, toy_train_ids):
    g, labels, _ = toy
    f = np.full((g.num_vertices, 2), 1e300)
    with pytest.raises(DivergenceError):
        train(GatModel.init(2, 1, 2, 2), f, g, labels, toy_train_ids, TrainConfig(epochs=3, dropout_rate=0.0))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(dropout_rate=1.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_checkpoint_roundtrip(tmp_path):
    model = GatModel.init(5, 3, 4, 6, seed=-7, leaky_slope=0.1)
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, model)
    back = load_checkpoint(p)
    assert (back.seed, back.leaky_slope) == (-7, 0.1)
    for k, v in model.parameters().items():
        assert back.parameters()[k].tobytes() == v.tobytes()
    raw = p.read_bytes()
    assert raw[:8] == b"GNEECKPT"
    (tmp_path / "bad.ckpt").write_bytes(raw[:-8])
    with pytest.raises(InputError, match="truncated"):
        load_checkpoint(tmp_path / "bad.ckpt")
    (tmp_path / "junk.ckpt").write_bytes(b"x" * 100)
    with pytest.raises(InputError, match="not a checkpoint"):
        load_checkpoint(tmp_path / "junk.ckpt")


def test_embeddings_roundtrip(tmp_path):
    g = path(3)
    z = np.random.default_rng(0).normal(size=(3, 4))
    write_embeddings(tmp_path / "z.tsv", g, z)
    names, back = read_embeddings(tmp_path / "z.tsv")
    assert names == list(g.names)
    assert back.tobytes() == z.tobytes()
    assert (tmp_path / "z.tsv").read_text().startswith("# vertex_name\tz0\tz1\tz2\tz3\n")
