import logging

import numpy as np
import pytest

from gnee.datasets import TOY_TRAIN, toy_event_graph
from gnee.graph import EVENT, LabelAssignment, VertexKind, build_graph


@pytest.fixture(autouse=True)
def _quiet_graph_warnings(caplog):
    caplog.set_level(logging.ERROR, logger="gnee")


@pytest.fixture
def toy():
    g, labels, feats = toy_event_graph(seed=0).build()
    return g, labels, feats


@pytest.fixture
def toy_train_ids(toy):
    g = toy[0]
    return [g.id_of(name) for name in TOY_TRAIN]


def random_instance(seed, max_vertices=10, max_dim=4, max_heads=2, max_head_dim=3):
    """Small random graph, features, labels and perturbed model for gradient checks."""
    from gnee.gat import GatModel

    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, max_vertices + 1))
    m = int(rng.integers(1, max_dim + 1))
    C = int(rng.integers(1, max_heads + 1))
    dh = int(rng.integers(1, max_head_dim + 1))
    K = int(rng.integers(2, 4))
    names = [f"v{i:02d}" for i in range(n)]
    verts = [(nm, EVENT if i % 2 == 0 else VertexKind.component("person")) for i, nm in enumerate(names)]
    edges = [(names[i], names[j]) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.4]
    g = build_graph(verts, edges)
    events = g.event_ids()
    labels = LabelAssignment({v: int(rng.integers(1, K + 1)) for v in events}, tuple(f"k{k}" for k in range(K)))
    f = rng.normal(size=(n, m))
    model = GatModel.init(m, C, dh, K, seed=seed)
    model = model.with_parameters({k: v + 0.5 * rng.normal(size=v.shape) for k, v in model.parameters().items()})
    return g, f, labels, events, model


def star(n_leaves=3):
    verts = [("v0", EVENT)] + [(f"v{i}", VertexKind.component("loc")) for i in range(1, n_leaves + 1)]
    return build_graph(verts, [("v0", f"v{i}") for i in range(1, n_leaves + 1)])


def path(n=3):
    verts = [(f"v{i}", EVENT if i % 2 == 0 else VertexKind.component("loc")) for i in range(n)]
    return build_graph(verts, [(f"v{i}", f"v{i + 1}") for i in range(n - 1)])


def central_differences(model, f, g, labels, mask, h=1e-5):
    """Independent gradient oracle: central finite differences of the masked loss."""
    from gnee.gat import loss_value

    out = {}
    for name, value in model.parameters().items():
        grad = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            p = value.copy()
            p[idx] += h
            up = loss_value(model.with_parameters({name: p}), f, g, labels, mask)
            p[idx] -= 2 * h
            down = loss_value(model.with_parameters({name: p}), f, g, labels, mask)
            grad[idx] = (up - down) / (2 * h)
        out[name] = grad
    return out


def max_relative_error(analytic, numeric, floor=1e-6):
    """max |a - n| / max(|a|, |n|, floor) over every parameter entry."""
    worst = 0.0
    for name in analytic:
        a, n = analytic[name], numeric[name]
        err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(err.max()))
    return worst


_ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the line is printed and collected for the summary."""

    def record(number, title, ok, detail=""):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        print(line)
        _ACCEPTANCE.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
