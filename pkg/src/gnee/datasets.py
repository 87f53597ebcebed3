"""Synthetic event graphs: the 8-event toy graph, planted partitions, sized graphs.

Each generator returns a :class:`Dataset` of plain records so it can be fed
to :func:`gnee.graph.build_graph` or written out as TSV files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import EVENT, EventGraph, LabelAssignment, VertexKind, build_graph, make_labels
from .rng import stream


@dataclass
class Dataset:
    vertices: list[tuple[str, VertexKind]]
    edges: list[tuple[str, str, float]]
    labels: dict[str, str] = field(default_factory=dict)
    features: dict[str, np.ndarray] = field(default_factory=dict)

    def build(self) -> tuple[EventGraph, LabelAssignment, dict[int, np.ndarray]]:
        g = build_graph(self.vertices, self.edges)
        feats = {g.id_of(name): vec for name, vec in self.features.items()}
        return g, make_labels(g, self.labels), feats

    def write(self, directory: str | Path) -> dict[str, Path]:
        """Write ``vertices.tsv``, ``edges.tsv`` and (if any) ``features.tsv``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {"vertices": d / "vertices.tsv", "edges": d / "edges.tsv"}
        with open(paths["vertices"], "w", encoding="utf-8") as fh:
            fh.write("# name\tkind\tlabel\n")
            for name, kind in self.vertices:
                fh.write(f"{name}\t{kind}\t{self.labels.get(name, '-')}\n")
        with open(paths["edges"], "w", encoding="utf-8") as fh:
            fh.write("# src\tdst\tweight\n")
            for u, v, w in self.edges:
                fh.write(f"{u}\t{v}\t{w!r}\n")
        if self.features:
            paths["features"] = d / "features.tsv"
            with open(paths["features"], "w", encoding="utf-8") as fh:
                fh.write("# vertex_name\tfeatures\n")
                for name, vec in self.features.items():
                    fh.write(name + "\t" + ",".join(repr(float(x)) for x in vec) + "\n")
        return paths


TOY_ORGANIZATIONS = {"o1": (1, 2), "o2": (3, 4), "o3": (5, 6), "o4": (7, 8)}
TOY_GEOGRAPHY = {"g1": (1, 6, 7, 8), "g2": (2, 3, 4, 5)}
TOY_CLASSES = {"A": (1, 2, 3, 4), "B": (5, 6, 7, 8)}
TOY_TRAIN = ("e1", "e5")


def toy_event_graph(seed: int = 0, noise: float = 0.05) -> Dataset:
    """Eight events, four organizations and two places.

    Organizations split the events {1..4} / {5..8}, which is also the class
    split; places split them {1,6,7,8} / {2,3,4,5}. Event features are the
    class one-hot vector plus Gaussian noise of scale ``noise``.
    """
    rng = stream(seed, "toy-features")
    events = [f"e{i}" for i in range(1, 9)]
    vertices = [(e, EVENT) for e in events]
    vertices += [(o, VertexKind.component("organization")) for o in TOY_ORGANIZATIONS]
    vertices += [(gname, VertexKind.component("location")) for gname in TOY_GEOGRAPHY]
    edges = [(f"e{i}", comp, 1.0) for group in (TOY_ORGANIZATIONS, TOY_GEOGRAPHY) for comp, members in group.items() for i in members]
    labels = {f"e{i}": cls for cls, members in TOY_CLASSES.items() for i in members}
    onehot = {"A": np.array([1.0, 0.0]), "B": np.array([0.0, 1.0])}
    features = {e: onehot[labels[e]] + noise * rng.standard_normal(2) for e in events}
    return Dataset(vertices, edges, labels, features)


def planted_partition(
    num_events: int = 60,
    num_classes: int = 3,
    components_per_class: int = 4,
    feature_dim: int = 16,
    feature_noise: float = 0.5,
    cross_edge_prob: float = 0.5,
    seed: int = 0,
) -> Dataset:
    """Events wired to components of their own class, plus noisy cross edges.

    Every event links to one component of its own class chosen at random;
    with probability ``cross_edge_prob`` it also links to a random component
    of another class. Event features are the class centroid (a random unit
    vector) plus isotropic Gaussian noise of scale ``feature_noise``.
    """
    rng = stream(seed, "planted-partition")
    types = ("person", "location")
    centroids = rng.standard_normal((num_classes, feature_dim))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)

    comps = {k: [f"c{k}_{j}" for j in range(components_per_class)] for k in range(num_classes)}
    vertices = [(name, VertexKind.component(types[j % len(types)])) for k in comps for j, name in enumerate(comps[k])]
    edges, labels, features = [], {}, {}
    width = len(str(num_events - 1))
    for i in range(num_events):
        k = i % num_classes
        name = f"e{i:0{width}d}"
        vertices.append((name, EVENT))
        labels[name] = f"class{k}"
        features[name] = centroids[k] + feature_noise * rng.standard_normal(feature_dim)
        edges.append((name, comps[k][rng.integers(components_per_class)], 1.0))
        if rng.random() < cross_edge_prob:
            other = (k + 1 + rng.integers(num_classes - 1)) % num_classes
            edges.append((name, comps[other][rng.integers(components_per_class)], 1.0))
    return Dataset(vertices, edges, labels, features)


def sized_event_graph(num_vertices: int, num_edges: int, num_classes: int = 2, seed: int = 0) -> Dataset:
    """Connected bipartite event/component graph with exact vertex and edge counts.

    Half the vertices (rounded up) are events; a random spanning tree is
    laid first and the remaining edges are drawn without replacement from
    the unused event-component pairs.
    """
    n_events = (num_vertices + 1) // 2
    n_comp = num_vertices - n_events
    if num_edges < num_vertices - 1 or num_edges > n_events * n_comp or n_comp < 1:
        raise ValueError(f"cannot build a connected bipartite graph with |V|={num_vertices}, |E|={num_edges}")
    rng = stream(seed, "sized-graph")
    events = [f"ev{i:05d}" for i in range(n_events)]
    comps = [f"co{i:05d}" for i in range(n_comp)]
    vertices = [(e, EVENT) for e in events] + [(c, VertexKind.component(("person", "location", "date")[i % 3])) for i, c in enumerate(comps)]

    pairs: set[tuple[int, int]] = set()
    # spanning tree: add vertices in random order, each attaching to an earlier vertex of the other type
    order = [("e", i) for i in range(n_events)] + [("c", i) for i in range(n_comp)]
    order = [order[i] for i in rng.permutation(len(order))]
    placed = {"e": [], "c": []}
    first = order[0]
    placed[first[0]].append(first[1])
    pending = order[1:]
    while pending:
        progressed = []
        for kind, i in pending:
            other = "c" if kind == "e" else "e"
            if placed[other]:
                j = placed[other][rng.integers(len(placed[other]))]
                pairs.add((i, j) if kind == "e" else (j, i))
                placed[kind].append(i)
            else:
                progressed.append((kind, i))
        pending = progressed

    remaining = num_edges - len(pairs)
    while remaining > 0:
        e, c = int(rng.integers(n_events)), int(rng.integers(n_comp))
        if (e, c) not in pairs:
            pairs.add((e, c))
            remaining -= 1
    edges = [(events[e], comps[c], 1.0) for e, c in sorted(pairs)]
    labels = {name: f"class{int(rng.integers(num_classes))}" for name in events}
    return Dataset(vertices, edges, labels)
