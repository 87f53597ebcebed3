"""Heterogeneous event graph: vertices are events or typed components."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import InputError

log = logging.getLogger(__name__)

EVENT_KIND = "event"


@dataclass(frozen=True, order=True)
class VertexKind:
    """Either an event (``component_type is None``) or a typed component."""

    component_type: str | None = None

    def __post_init__(self):
        if self.component_type is not None and not self.component_type.strip():
            raise ValueError("component type name must be non-empty")
        if self.component_type == EVENT_KIND:
            raise ValueError(f"{EVENT_KIND!r} is reserved for event vertices")

    @classmethod
    def event(cls) -> "VertexKind":
        return cls(None)

    @classmethod
    def component(cls, type_name: str) -> "VertexKind":
        return cls(type_name)

    @classmethod
    def parse(cls, text: str) -> "VertexKind":
        text = text.strip()
        return cls.event() if text == EVENT_KIND else cls.component(text)

    @property
    def is_event(self) -> bool:
        return self.component_type is None

    def __str__(self) -> str:
        return EVENT_KIND if self.is_event else self.component_type


EVENT = VertexKind.event()


@dataclass(frozen=True, eq=False)
class EventGraph:
    """Finalized, immutable undirected graph in CSR form.

    Vertex ids are contiguous ``0..n-1`` assigned in sorted-name order, so
    the same records in any order give the same graph. ``edges`` holds each
    undirected edge once as ``(u, v)`` with ``u < v``.
    """

    names: tuple[str, ...]
    kinds: tuple[VertexKind, ...]
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    edges: np.ndarray
    edge_weights: np.ndarray
    _index: dict = field(repr=False, compare=False, default_factory=dict)

    @property
    def num_vertices(self) -> int:
        return len(self.names)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def degree(self, v: int) -> int:
        self._check(v)
        return int(self.indptr[v + 1] - self.indptr[v])

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def id_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown vertex {name!r}") from None

    def is_event(self, v: int) -> bool:
        return self.kinds[v].is_event

    def event_ids(self) -> list[int]:
        return [v for v, k in enumerate(self.kinds) if k.is_event]

    def component_ids(self) -> list[int]:
        return [v for v, k in enumerate(self.kinds) if not k.is_event]

    def _check(self, v: int):
        if not (isinstance(v, (int, np.integer)) and 0 <= v < self.num_vertices):
            raise IndexError(f"invalid vertex id {v!r} (graph has {self.num_vertices} vertices)")

    def __eq__(self, other):
        if not isinstance(other, EventGraph):
            return NotImplemented
        return (
            self.names == other.names
            and self.kinds == other.kinds
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def build_graph(
    vertex_records: Iterable[tuple[str, VertexKind]],
    edge_records: Iterable[tuple[str, str] | tuple[str, str, float]],
) -> EventGraph:
    """Validate records and finalize them into an :class:`EventGraph`.

    ``edge_records`` entries are ``(src, dst)`` or ``(src, dst, weight)``;
    the weight defaults to 1.0.
    """
    kinds_by_name: dict[str, VertexKind] = {}
    for name, kind in vertex_records:
        if name in kinds_by_name:
            raise InputError(f"duplicate vertex {name!r}")
        if not isinstance(kind, VertexKind):
            kind = VertexKind.parse(str(kind))
        kinds_by_name[name] = kind

    names = tuple(sorted(kinds_by_name))
    index = {name: i for i, name in enumerate(names)}

    seen: dict[tuple[int, int], float] = {}
    for rec in edge_records:
        if len(rec) == 2:
            src, dst = rec
            w = 1.0
        else:
            src, dst, w = rec
            w = float(w)
        for endpoint in (src, dst):
            if endpoint not in index:
                raise InputError(f"edge ({src!r}, {dst!r}) references undeclared vertex {endpoint!r}")
        if src == dst:
            raise InputError(f"self-loop on vertex {src!r} is not allowed")
        if not (np.isfinite(w) and w > 0):
            raise InputError(f"edge ({src!r}, {dst!r}) has non-positive weight {w}")
        u, v = sorted((index[src], index[dst]))
        if (u, v) in seen:
            raise InputError(f"duplicate edge ({src!r}, {dst!r})")
        seen[(u, v)] = w

    n = len(names)
    pairs = sorted(seen)
    edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    edge_weights = np.array([seen[p] for p in pairs], dtype=np.float64)

    # both directions, sorted by (row, col)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    ws = np.concatenate([edge_weights, edge_weights])
    order = np.lexsort((cols, rows))
    rows, cols, ws = rows[order], cols[order], ws[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    indptr = np.cumsum(indptr)

    g = EventGraph(
        names=names,
        kinds=tuple(kinds_by_name[nm] for nm in names),
        indptr=_frozen(indptr),
        indices=_frozen(cols.astype(np.int64)),
        weights=_frozen(ws.astype(np.float64)),
        edges=_frozen(edges),
        edge_weights=_frozen(edge_weights),
        _index=index,
    )
    n_isolated = int(np.sum(g.degrees() == 0))
    if n_isolated:
        log.warning("graph has %d isolated vertices", n_isolated)
    elif n and _count_components(g) > 1:
        log.warning("graph is disconnected")
    return g


def _count_components(g: EventGraph) -> int:
    adj = csr_matrix((g.weights, g.indices, g.indptr), shape=(g.num_vertices,) * 2)
    return connected_components(adj, directed=False)[0]


def neighbors(g: EventGraph, v: int) -> list[tuple[int, float]]:
    g._check(v)
    lo, hi = g.indptr[v], g.indptr[v + 1]
    return [(int(u), float(w)) for u, w in zip(g.indices[lo:hi], g.weights[lo:hi])]


def graph_stats(g: EventGraph) -> dict:
    """Summary counts in the style of a dataset overview table.

    ``avg_degree`` is ``2|E|/|V|`` rounded to two decimals; the unrounded
    value is kept under ``avg_degree_exact``.
    """
    n, e = g.num_vertices, g.num_edges
    exact = 2.0 * e / n if n else 0.0
    hist = Counter(k.component_type for k in g.kinds if not k.is_event)
    n_events = sum(1 for k in g.kinds if k.is_event)
    return {
        "num_vertices": n,
        "num_edges": e,
        "avg_degree": round(exact, 2),
        "avg_degree_exact": exact,
        "num_event_vertices": n_events,
        "num_component_vertices": n - n_events,
        "component_type_histogram": dict(sorted(hist.items())),
    }


def build_adjacency_features(g: EventGraph) -> np.ndarray:
    """Dense weighted adjacency rows, the featureless-graph fallback input."""
    n = g.num_vertices
    x = np.zeros((n, n), dtype=np.float64)
    rows = np.repeat(np.arange(n), g.degrees())
    x[rows, g.indices] = g.weights
    return x


@dataclass(frozen=True)
class LabelAssignment:
    """Partial map from event vertex id to class id in ``1..K``."""

    labels: dict[int, int]
    class_names: tuple[str, ...]

    def __post_init__(self):
        k = len(self.class_names)
        for v, c in self.labels.items():
            if not 1 <= c <= k:
                raise InputError(f"class {c} of vertex {v} outside 1..{k}")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def validate(self, g: EventGraph):
        for v in self.labels:
            g._check(v)
            if not g.is_event(v):
                raise InputError(f"labeled vertex {g.names[v]!r} is not an event vertex")

    def class_name(self, c: int) -> str:
        return self.class_names[c - 1]


# ---------------------------------------------------------------------------
# TSV loading


def iter_tsv(path: Path):
    """Yield ``(line_number, fields)`` for non-blank, non-comment lines."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line.split("\t")


def read_vertices(path: str | Path) -> tuple[list[tuple[str, VertexKind]], dict[str, str]]:
    """Parse a ``name<TAB>kind<TAB>label`` file.

    Returns the vertex records and a ``name -> class name`` map for labeled
    vertices (label ``-`` means unlabeled).
    """
    path = Path(path)
    records, raw_labels = [], {}
    for lineno, fields in iter_tsv(path):
        if len(fields) not in (2, 3):
            raise InputError(f"expected 2 or 3 tab-separated columns, got {len(fields)}", path, lineno)
        name, kind = fields[0].strip(), fields[1].strip()
        if not name:
            raise InputError("empty vertex name", path, lineno, 1)
        try:
            vk = VertexKind.parse(kind)
        except ValueError as exc:
            raise InputError(str(exc), path, lineno, 2) from None
        label = fields[2].strip() if len(fields) == 3 else "-"
        if label not in ("", "-"):
            if not vk.is_event:
                raise InputError(f"component vertex {name!r} carries a label", path, lineno, 3)
            raw_labels[name] = label
        records.append((name, vk))
    return records, raw_labels


def read_edges(path: str | Path) -> list[tuple[str, str, float]]:
    path = Path(path)
    out = []
    for lineno, fields in iter_tsv(path):
        if len(fields) not in (2, 3):
            raise InputError(f"expected 2 or 3 tab-separated columns, got {len(fields)}", path, lineno)
        w = 1.0
        if len(fields) == 3 and fields[2].strip():
            try:
                w = float(fields[2])
            except ValueError:
                raise InputError(f"bad weight {fields[2]!r}", path, lineno, 3) from None
        out.append((fields[0].strip(), fields[1].strip(), w))
    return out


def make_labels(g: EventGraph, raw_labels: dict[str, str]) -> LabelAssignment:
    """Intern class names (sorted) to ids ``1..K`` and check they sit on events."""
    class_names = tuple(sorted(set(raw_labels.values())))
    cid = {c: i + 1 for i, c in enumerate(class_names)}
    labels = {g.id_of(name): cid[c] for name, c in raw_labels.items()}
    la = LabelAssignment(dict(sorted(labels.items())), class_names)
    la.validate(g)
    return la


def load_graph(vertices_path: str | Path, edges_path: str | Path) -> tuple[EventGraph, LabelAssignment]:
    records, raw_labels = read_vertices(vertices_path)
    edge_records = read_edges(edges_path)
    try:
        g = build_graph(records, edge_records)
    except InputError as exc:
        if exc.path is None:
            exc.path = Path(edges_path)
        raise
    return g, make_labels(g, raw_labels)


def write_vertices(path: str | Path, g: EventGraph, labels: LabelAssignment | None = None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# name\tkind\tlabel\n")
        for v, (name, kind) in enumerate(zip(g.names, g.kinds)):
            lab = "-"
            if labels is not None and v in labels.labels:
                lab = labels.class_name(labels.labels[v])
            fh.write(f"{name}\t{kind}\t{lab}\n")


def write_edges(path: str | Path, g: EventGraph):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# src\tdst\tweight\n")
        for (u, v), w in zip(g.edges, g.edge_weights):
            fh.write(f"{g.names[u]}\t{g.names[v]}\t{w!r}\n")


def write_vertex_ids(path: str | Path, g: EventGraph):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# id\tname\tkind\n")
        for v, (name, kind) in enumerate(zip(g.names, g.kinds)):
            fh.write(f"{v}\t{name}\t{kind}\n")

