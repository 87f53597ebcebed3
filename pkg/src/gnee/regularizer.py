"""Event-feature propagation onto component vertices.

Event rows are held fixed and every other reachable vertex is driven to the
weighted average of its neighbours (the harmonic solution of the quadratic
smoothness objective), by Gauss-Seidel sweeps in ascending vertex id.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import InputError
from .graph import EventGraph, iter_tsv

log = logging.getLogger(__name__)


class UnreachedPolicy(str, enum.Enum):
    ZERO_FILL = "zero"
    GLOBAL_MEAN_FILL = "global_mean"


@dataclass(frozen=True)
class RegularizerConfig:
    tolerance: float = 1e-6
    max_iterations: int = 10000
    unreached_policy: UnreachedPolicy = UnreachedPolicy.ZERO_FILL

    def __post_init__(self):
        if not self.tolerance >= 0:
            raise ValueError("tolerance must be >= 0")
        if int(self.max_iterations) < 1:
            raise ValueError("max_iterations must be >= 1")
        object.__setattr__(self, "unreached_policy", UnreachedPolicy(self.unreached_policy))


@dataclass
class RegularizationResult:
    features: np.ndarray
    iterations: int
    residual: float
    converged: bool
    unreached: list[int] = field(default_factory=list)
    objective_history: list[float] = field(default_factory=list)


def mean_pool_tokens(token_vectors: Sequence[Sequence[float]]) -> np.ndarray:
    """Componentwise mean of a non-empty list of equal-length token vectors."""
    if len(token_vectors) == 0:
        raise InputError("cannot pool an empty token list")
    dims = {len(t) for t in token_vectors}
    if len(dims) != 1:
        raise InputError(f"token vectors disagree in dimension: {sorted(dims)}")
    return np.asarray(token_vectors, dtype=np.float64).mean(axis=0)


def initialize_features(
    g: EventGraph, event_features: Mapping[int, Sequence[float]], cfg: RegularizerConfig = RegularizerConfig()
) -> np.ndarray:
    events = g.event_ids()
    if not events:
        raise InputError("graph has no event vertices to take features from")
    missing = [g.names[v] for v in events if v not in event_features]
    if missing:
        raise InputError(f"no features supplied for {len(missing)} event vertices, e.g. {missing[:3]}")
    dims = {len(event_features[v]) for v in events}
    if len(dims) != 1:
        raise InputError(f"event features disagree in dimension: {sorted(dims)}")
    (m,) = dims
    f0 = np.zeros((g.num_vertices, m), dtype=np.float64)
    for v in events:
        f0[v] = event_features[v]
    if cfg.unreached_policy is UnreachedPolicy.GLOBAL_MEAN_FILL:
        f0[g.component_ids()] = f0[events].mean(axis=0)
    if not np.all(np.isfinite(f0)):
        raise InputError("event features contain non-finite values")
    return f0


def objective_value(g: EventGraph, f: np.ndarray) -> float:
    """``sum over undirected edges of w_uv * ||f_u - f_v||^2``."""
    f = np.asarray(f)
    if f.ndim != 2 or f.shape[0] != g.num_vertices:
        raise InputError(f"feature matrix shape {f.shape} does not match {g.num_vertices} vertices")
    if g.num_edges == 0:
        return 0.0
    u, v = g.edges[:, 0], g.edges[:, 1]
    diff = f[u] - f[v]
    return float(np.dot(g.edge_weights, np.einsum("ij,ij->i", diff, diff)))


def reachable_from_events(g: EventGraph) -> np.ndarray:
    n = g.num_vertices
    adj = csr_matrix((g.weights, g.indices, g.indptr), shape=(n, n))
    _, comp = connected_components(adj, directed=False)
    is_event = np.array([k.is_event for k in g.kinds], dtype=bool)
    return np.isin(comp, np.unique(comp[is_event]))


def harmonic_residual(g: EventGraph, f: np.ndarray, vertices: Sequence[int]) -> float:
    """Max-norm violation of ``f_v = weighted mean of neighbours`` over ``vertices``."""
    worst = 0.0
    for v in vertices:
        lo, hi = g.indptr[v], g.indptr[v + 1]
        if hi == lo:
            continue
        w = g.weights[lo:hi]
        avg = w @ f[g.indices[lo:hi]] / w.sum()
        worst = max(worst, float(np.max(np.abs(avg - f[v]))))
    return worst


def regularize(
    g: EventGraph, f0: np.ndarray, cfg: RegularizerConfig = RegularizerConfig(), track_objective: bool = False
) -> RegularizationResult:
    """Propagate event features to component vertices.

    Stops when no coordinate moves by more than ``cfg.tolerance`` during a
    sweep and the harmonic residual is within the same tolerance, or after
    ``cfg.max_iterations`` sweeps. Component vertices with
    no path to an event keep their ``f0`` rows and are listed in
    ``unreached``. With ``track_objective`` the smoothness objective is
    recorded before the first sweep and after each one.
    """
    f0 = np.asarray(f0, dtype=np.float64)
    if f0.ndim != 2 or f0.shape[0] != g.num_vertices:
        raise InputError(f"feature matrix shape {f0.shape} does not match {g.num_vertices} vertices")
    f = f0.copy()
    reach = reachable_from_events(g)
    free = [v for v in range(g.num_vertices) if not g.is_event(v) and reach[v]]
    unreached = [v for v in range(g.num_vertices) if not g.is_event(v) and not reach[v]]
    if unreached:
        log.warning("%d component vertices are unreachable from any event; left at initialization", len(unreached))

    slices = []
    for v in free:
        lo, hi = g.indptr[v], g.indptr[v + 1]
        w = g.weights[lo:hi]
        slices.append((v, g.indices[lo:hi], w / w.sum()))

    history = [objective_value(g, f)] if track_objective else []
    iterations, converged, delta = 0, not slices, 0.0
    while slices and iterations < cfg.max_iterations:
        iterations += 1
        delta = 0.0
        for v, nbrs, w in slices:
            new = w @ f[nbrs]
            change = float(np.max(np.abs(new - f[v])))
            if change > delta:
                delta = change
            f[v] = new
        if track_objective:
            history.append(objective_value(g, f))
        # a small last sweep is necessary but not sufficient; confirm on the residual itself
        if delta <= cfg.tolerance and harmonic_residual(g, f, free) <= cfg.tolerance:
            converged = True
            break
    if not converged:
        log.warning("regularizer stopped after %d sweeps with last change %.3g", iterations, delta)

    f.setflags(write=False)
    return RegularizationResult(
        features=f,
        iterations=iterations,
        residual=harmonic_residual(g, f, free),
        converged=converged,
        unreached=unreached,
        objective_history=history,
    )


# ---------------------------------------------------------------------------
# features TSV


def _floats(text: str, path, lineno, col) -> list[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise InputError(f"bad float list {text[:40]!r}", path, lineno, col) from None


def read_features(path: str | Path, g: EventGraph) -> dict[int, np.ndarray]:
    """Read ``name<TAB>v1,...,vm`` rows, or token rows ``name<TAB>k<TAB>t1<TAB>...<TAB>tk``.

    Token rows are mean-pooled. Rows for names not in the graph are an error.
    """
    path = Path(path)
    out: dict[int, np.ndarray] = {}
    for lineno, fields in iter_tsv(path):
        name = fields[0].strip()
        try:
            v = g.id_of(name)
        except KeyError:
            raise InputError(f"unknown vertex {name!r}", path, lineno, 1) from None
        if v in out:
            raise InputError(f"duplicate features for {name!r}", path, lineno, 1)
        if len(fields) == 2:
            out[v] = np.asarray(_floats(fields[1], path, lineno, 2))
        elif len(fields) >= 3:
            try:
                k = int(fields[1])
            except ValueError:
                raise InputError(f"token count {fields[1]!r} is not an integer", path, lineno, 2) from None
            if k != len(fields) - 2:
                raise InputError(f"declared {k} token rows, found {len(fields) - 2}", path, lineno, 2)
            tokens = [_floats(t, path, lineno, 3 + i) for i, t in enumerate(fields[2:])]
            try:
                out[v] = mean_pool_tokens(tokens)
            except InputError as exc:
                raise InputError(exc.message, path, lineno) from None
        else:
            raise InputError("expected at least 2 tab-separated columns", path, lineno)
    return out


def write_features(path: str | Path, g: EventGraph, f: np.ndarray):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# vertex_name\tfeatures\n")
        for name, row in zip(g.names, f):
            fh.write(name + "\t" + ",".join(repr(float(x)) for x in row) + "\n")
