"""Single-layer multi-head graph attention with a softmax classifier.

Each head projects vertex features with its own matrix, scores every
(center, neighbour) pair with a LeakyReLU of a linear form, normalises the
scores over the neighbourhood (the vertex itself included) and aggregates
the projected neighbours. Head outputs pass through ELU and are
concatenated into the embedding. Gradients are derived by hand.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DivergenceError, InputError
from .graph import EventGraph, LabelAssignment, iter_tsv
from .rng import stream

log = logging.getLogger(__name__)

PARAM_NAMES = ("W", "a_src", "a_dst", "Wc", "bc")


def leaky_relu(x, slope):
    return np.where(x > 0, x, slope * x)


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    ex = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return ex / ex.sum(axis=axis, keepdims=True)


def _log_softmax(x):
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


@dataclass(frozen=True)
class AttentionHead:
    weight: np.ndarray  # (d_head, m_in)
    attn_vector: np.ndarray  # (2 * d_head,): center half, then neighbour half
    leaky_slope: float = 0.2

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        a = np.asarray(self.attn_vector, dtype=np.float64).ravel()
        if w.ndim != 2 or a.shape != (2 * w.shape[0],):
            raise ValueError(f"attention vector of length {a.size} does not match head dim {w.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(a))):
            raise ValueError("head parameters must be finite")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "attn_vector", a)

    @property
    def head_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class GatModel:
    W: np.ndarray  # (C, d_head, m)
    a_src: np.ndarray  # (C, d_head)
    a_dst: np.ndarray  # (C, d_head)
    Wc: np.ndarray  # (K, C * d_head)
    bc: np.ndarray  # (K,)
    leaky_slope: float = 0.2
    seed: int = 0

    def __post_init__(self):
        C, dh, _ = self.W.shape
        if C < 1 or dh < 1:
            raise ValueError("need at least one head of positive width")
        if self.a_src.shape != (C, dh) or self.a_dst.shape != (C, dh):
            raise ValueError("attention vectors do not match head shapes")
        if self.Wc.ndim != 2 or self.Wc.shape[1] != C * dh or self.bc.shape != (self.Wc.shape[0],):
            raise ValueError(f"classifier {self.Wc.shape} does not take {C * dh}-dim embeddings")

    @classmethod
    def init(cls, in_dim: int, num_heads: int, head_dim: int, num_classes: int, seed: int = 0, leaky_slope: float = 0.2):
        """Glorot-uniform initialization from the seed's ``init`` stream."""
        rng = stream(seed, "init")

        def glorot(shape, fan_in, fan_out):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-limit, limit, size=shape)

        d = num_heads * head_dim
        W = glorot((num_heads, head_dim, in_dim), in_dim, head_dim)
        a = glorot((num_heads, 2 * head_dim), 2 * head_dim, 1)
        return cls(
            W=W,
            a_src=np.ascontiguousarray(a[:, :head_dim]),
            a_dst=np.ascontiguousarray(a[:, head_dim:]),
            Wc=glorot((num_classes, d), d, num_classes),
            bc=np.zeros(num_classes),
            leaky_slope=leaky_slope,
            seed=seed,
        )

    @classmethod
    def from_heads(cls, heads: Sequence[AttentionHead], classifier_weight, classifier_bias, seed: int = 0):
        if not heads:
            raise ValueError("need at least one head")
        dh = heads[0].head_dim
        if any(h.head_dim != dh or h.in_dim != heads[0].in_dim for h in heads):
            raise ValueError("heads disagree in shape")
        return cls(
            W=np.stack([h.weight for h in heads]),
            a_src=np.stack([h.attn_vector[:dh] for h in heads]),
            a_dst=np.stack([h.attn_vector[dh:] for h in heads]),
            Wc=np.asarray(classifier_weight, dtype=np.float64),
            bc=np.asarray(classifier_bias, dtype=np.float64),
            leaky_slope=heads[0].leaky_slope,
            seed=seed,
        )

    @property
    def num_heads(self) -> int:
        return self.W.shape[0]

    @property
    def head_dim(self) -> int:
        return self.W.shape[1]

    @property
    def in_dim(self) -> int:
        return self.W.shape[2]

    @property
    def embed_dim(self) -> int:
        return self.num_heads * self.head_dim

    @property
    def num_classes(self) -> int:
        return self.Wc.shape[0]

    def head(self, c: int) -> AttentionHead:
        if not 0 <= c < self.num_heads:
            raise IndexError(f"head index {c} out of range for {self.num_heads} heads")
        return AttentionHead(self.W[c], np.concatenate([self.a_src[c], self.a_dst[c]]), self.leaky_slope)

    @property
    def heads(self) -> list[AttentionHead]:
        return [self.head(c) for c in range(self.num_heads)]

    def parameters(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def with_parameters(self, params: dict[str, np.ndarray]) -> "GatModel":
        merged = {**self.parameters(), **params}
        return GatModel(**{k: np.array(v, dtype=np.float64) for k, v in merged.items()}, leaky_slope=self.leaky_slope, seed=self.seed)


# ---------------------------------------------------------------------------
# attention neighbourhoods


@dataclass(frozen=True)
class AttentionEdges:
    """Neighbourhood ``N(i) + {i}`` for every vertex, flattened and sorted by center."""

    center: np.ndarray
    nbr: np.ndarray
    starts: np.ndarray
    num_vertices: int


def attention_edges(g: EventGraph) -> AttentionEdges:
    n = g.num_vertices
    rows = np.repeat(np.arange(n), g.degrees())
    center = np.concatenate([rows, np.arange(n)])
    nbr = np.concatenate([g.indices, np.arange(n)])
    order = np.lexsort((nbr, center))
    center, nbr = center[order], nbr[order]
    starts = np.searchsorted(center, np.arange(n))
    return AttentionEdges(center, nbr, starts, n)


def _segment_softmax(scores, att: AttentionEdges):
    mx = np.maximum.reduceat(scores, att.starts)
    ex = np.exp(scores - mx[att.center])
    return ex / np.add.reduceat(ex, att.starts)[att.center]


# ---------------------------------------------------------------------------
# public single-head operations


def attention_logit(head: AttentionHead, z_i, z_j) -> float:
    z_i = np.asarray(z_i, dtype=np.float64)
    z_j = np.asarray(z_j, dtype=np.float64)
    if z_i.shape != (head.in_dim,) or z_j.shape != (head.in_dim,):
        raise InputError(f"inputs must have length {head.in_dim}")
    e = head.attn_vector @ np.concatenate([head.weight @ z_i, head.weight @ z_j])
    return float(leaky_relu(e, head.leaky_slope))


def attention_coefficients(head: AttentionHead, z_center, neighbor_zs) -> np.ndarray:
    """Softmax of the logits between ``z_center`` and each row of ``neighbor_zs``.

    The neighbourhood is taken as given, so callers include the center.
    """
    neighbor_zs = np.atleast_2d(np.asarray(neighbor_zs, dtype=np.float64))
    if neighbor_zs.shape[0] == 0 or neighbor_zs.size == 0:
        raise InputError("attention neighbourhood is empty")
    logits = np.array([attention_logit(head, z_center, z) for z in neighbor_zs])
    return softmax(logits)


def _check_features(f, in_dim, g: EventGraph):
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2 or f.shape != (g.num_vertices, in_dim):
        raise InputError(f"features of shape {f.shape} do not match ({g.num_vertices}, {in_dim})")
    return f


def head_forward(head: AttentionHead, f, g: EventGraph, activation=elu) -> np.ndarray:
    f = _check_features(f, head.in_dim, g)
    att = attention_edges(g)
    dh = head.head_dim
    _, p = _head_pass(head.weight, head.attn_vector[:dh], head.attn_vector[dh:], f, att, head.leaky_slope)
    return activation(p)


def multi_head_forward(model: GatModel, f, g: EventGraph) -> np.ndarray:
    f = _check_features(f, model.in_dim, g)
    return _forward(model, f, attention_edges(g))["z"]


def extract_head_features(model: GatModel, f, g: EventGraph, head_index: int) -> np.ndarray:
    return head_forward(model.head(head_index), f, g)


def classify(model: GatModel, z, activation: str = "softmax") -> np.ndarray:
    """Class probabilities per vertex.

    ``activation="sigmoid"`` gives independent per-class logistic outputs
    instead; training always uses the softmax head.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != model.embed_dim:
        raise InputError(f"embeddings of width {z.shape[-1]} do not match classifier input {model.embed_dim}")
    logits = z @ model.Wc.T + model.bc
    if activation == "softmax":
        return softmax(logits, axis=1)
    if activation == "sigmoid":
        return 1.0 / (1.0 + np.exp(-logits))
    raise ValueError(f"unknown activation {activation!r}")


def predict(model: GatModel, f, g: EventGraph) -> np.ndarray:
    """Predicted class id (``1..K``) for every vertex."""
    return np.argmax(classify(model, multi_head_forward(model, f, g)), axis=1) + 1


def _targets(labels: LabelAssignment, mask: Iterable[int]) -> tuple[np.ndarray, np.ndarray]:
    ids = np.array(sorted(set(mask)), dtype=np.int64)
    if ids.size == 0:
        raise InputError("loss mask is empty")
    missing = [int(v) for v in ids if int(v) not in labels.labels]
    if missing:
        raise InputError(f"mask contains unlabeled vertices {missing[:5]}")
    return ids, np.array([labels.labels[int(v)] - 1 for v in ids], dtype=np.int64)


def masked_loss(probs, labels: LabelAssignment, mask: Iterable[int]) -> float:
    """Mean cross-entropy of the true class over the masked vertices."""
    ids, y = _targets(labels, mask)
    p = np.asarray(probs, dtype=np.float64)[ids, y]
    with np.errstate(divide="ignore"):
        return float(np.mean(-np.log(p)))


# ---------------------------------------------------------------------------
# forward / backward


def _head_pass(W, a_src, a_dst, x, att: AttentionEdges, slope, att_mask=None):
    h = x @ W.T
    e = (h @ a_src)[att.center] + (h @ a_dst)[att.nbr]
    alpha = _segment_softmax(leaky_relu(e, slope), att)
    used = alpha if att_mask is None else alpha * att_mask
    p = np.add.reduceat(used[:, None] * h[att.nbr], att.starts, axis=0)
    return {"h": h, "e": e, "alpha": alpha, "used": used, "att_mask": att_mask, "p": p}, p


def _forward(model: GatModel, x, att: AttentionEdges, dropout: float = 0.0, rng=None):
    """Full pass; dropout (inverted, rate ``dropout``) needs ``rng``."""
    drop = dropout > 0 and rng is not None
    keep = 1.0 - dropout
    x_in = x * (rng.random(x.shape) < keep) / keep if drop else x
    heads, zs = [], []
    for c in range(model.num_heads):
        att_mask = (rng.random(att.center.shape) < keep) / keep if drop else None
        cache, p = _head_pass(model.W[c], model.a_src[c], model.a_dst[c], x_in, att, model.leaky_slope, att_mask)
        heads.append(cache)
        zs.append(elu(p))
    z = np.concatenate(zs, axis=1)
    logits = z @ model.Wc.T + model.bc
    return {"x": x_in, "heads": heads, "z": z, "logits": logits}


def _loss_and_dlogits(logits, ids, y):
    logp = _log_softmax(logits[ids])
    loss = -float(np.mean(logp[np.arange(len(ids)), y]))
    d = np.zeros_like(logits)
    g = np.exp(logp)
    g[np.arange(len(ids)), y] -= 1.0
    d[ids] = g / len(ids)
    return loss, d


def _backward(model: GatModel, cache, att: AttentionEdges, dlogits) -> dict[str, np.ndarray]:
    z, x = cache["z"], cache["x"]
    n, dh = att.num_vertices, model.head_dim
    grads = {
        "Wc": dlogits.T @ z,
        "bc": dlogits.sum(axis=0),
        "W": np.zeros_like(model.W),
        "a_src": np.zeros_like(model.a_src),
        "a_dst": np.zeros_like(model.a_dst),
    }
    dz = dlogits @ model.Wc
    for c, hc in enumerate(cache["heads"]):
        h, alpha, used, e = hc["h"], hc["alpha"], hc["used"], hc["e"]
        dp = dz[:, c * dh:(c + 1) * dh] * _elu_grad(hc["p"])
        dp_c = dp[att.center]
        dused = np.einsum("ij,ij->i", dp_c, h[att.nbr])
        dh_ = np.zeros_like(h)
        np.add.at(dh_, att.nbr, used[:, None] * dp_c)
        dalpha = dused if hc["att_mask"] is None else dused * hc["att_mask"]
        dot = np.add.reduceat(alpha * dalpha, att.starts)
        dscore = alpha * (dalpha - dot[att.center])
        de = dscore * np.where(e > 0, 1.0, model.leaky_slope)
        ds_src = np.bincount(att.center, weights=de, minlength=n)
        ds_dst = np.bincount(att.nbr, weights=de, minlength=n)
        grads["a_src"][c] = h.T @ ds_src
        grads["a_dst"][c] = h.T @ ds_dst
        dh_ += np.outer(ds_src, model.a_src[c]) + np.outer(ds_dst, model.a_dst[c])
        grads["W"][c] = dh_.T @ x
    return grads


def loss_value(model: GatModel, f, g: EventGraph, labels: LabelAssignment, mask: Iterable[int]) -> float:
    f = _check_features(f, model.in_dim, g)
    ids, y = _targets(labels, mask)
    cache = _forward(model, f, attention_edges(g))
    return _loss_and_dlogits(cache["logits"], ids, y)[0]


def gradients(model: GatModel, f, g: EventGraph, labels: LabelAssignment, mask: Iterable[int]) -> dict[str, np.ndarray]:
    """Exact gradient of the masked cross-entropy for every parameter (no dropout, no decay)."""
    f = _check_features(f, model.in_dim, g)
    ids, y = _targets(labels, mask)
    att = attention_edges(g)
    cache = _forward(model, f, att)
    _, dlogits = _loss_and_dlogits(cache["logits"], ids, y)
    return _backward(model, cache, att, dlogits)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 5e-3
    weight_decay: float = 5e-4
    dropout_rate: float = 0.6
    seed: int = 0
    patience: int = 100

    def __post_init__(self):
        if int(self.epochs) < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if not self.weight_decay >= 0:
            raise ValueError("weight_decay must be >= 0")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if int(self.patience) < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class TrainResult:
    model: GatModel
    loss_history: list[float] = field(default_factory=list)
    epochs_run: int = 0
    stopped_early: bool = False


def train(
    model: GatModel, f, g: EventGraph, labels: LabelAssignment, train_mask: Iterable[int], cfg: TrainConfig = TrainConfig()
) -> TrainResult:
    """Full-batch Adam on the masked cross-entropy.

    ``loss_history[t]`` is the dropout-free training loss of the parameters
    entering epoch ``t``. Training stops early once that loss has not
    improved for ``cfg.patience`` epochs. Weight decay is an L2 term on
    every matrix and attention vector (not the classifier bias).
    """
    f = _check_features(f, model.in_dim, g)
    ids, y = _targets(labels, train_mask)
    att = attention_edges(g)
    rng = stream(cfg.seed, "dropout")
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    params = {k: v.copy() for k, v in model.parameters().items()}
    m1 = {k: np.zeros_like(v) for k, v in params.items()}
    m2 = {k: np.zeros_like(v) for k, v in params.items()}
    history: list[float] = []
    best, since_best, stopped = np.inf, 0, False
    current = model

    for epoch in range(1, int(cfg.epochs) + 1):
        cache = _forward(current, f, att)
        loss, dlogits = _loss_and_dlogits(cache["logits"], ids, y)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite training loss at epoch {epoch} (lr={cfg.learning_rate})")
        history.append(loss)
        if loss < best:
            best, since_best = loss, 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                stopped = True
                break

        if cfg.dropout_rate > 0:
            cache = _forward(current, f, att, cfg.dropout_rate, rng)
            _, dlogits = _loss_and_dlogits(cache["logits"], ids, y)
        grads = _backward(current, cache, att, dlogits)

        for k in PARAM_NAMES:
            gk = grads[k]
            if k != "bc" and cfg.weight_decay:
                gk = gk + cfg.weight_decay * params[k]
            m1[k] = beta1 * m1[k] + (1 - beta1) * gk
            m2[k] = beta2 * m2[k] + (1 - beta2) * gk * gk
            mhat = m1[k] / (1 - beta1**epoch)
            vhat = m2[k] / (1 - beta2**epoch)
            params[k] = params[k] - cfg.learning_rate * mhat / (np.sqrt(vhat) + eps)
        if not all(np.all(np.isfinite(v)) for v in params.values()):
            raise DivergenceError(f"non-finite parameters after epoch {epoch} (lr={cfg.learning_rate})")
        current = model.with_parameters(params)

    return TrainResult(current, history, len(history), stopped)


# ---------------------------------------------------------------------------
# checkpoints and embedding export

_MAGIC = b"GNEECKPT"
_VERSION = 1
_HEADER = struct.Struct("<8sIQQQQqd")


def save_checkpoint(path: str | Path, model: GatModel):
    """Binary record: header then every parameter as little-endian float64."""
    header = _HEADER.pack(
        _MAGIC, _VERSION, model.in_dim, model.num_heads, model.head_dim, model.num_classes, model.seed, model.leaky_slope
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for name in PARAM_NAMES:
            fh.write(np.ascontiguousarray(getattr(model, name), dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> GatModel:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise InputError("truncated checkpoint header", path)
    magic, version, m, C, dh, K, seed, slope = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise InputError("not a checkpoint file", path)
    if version != _VERSION:
        raise InputError(f"unsupported checkpoint version {version}", path)
    shapes = {"W": (C, dh, m), "a_src": (C, dh), "a_dst": (C, dh), "Wc": (K, C * dh), "bc": (K,)}
    offset, arrays = _HEADER.size, {}
    for name in PARAM_NAMES:
        count = int(np.prod(shapes[name]))
        if offset + 8 * count > len(data):
            raise InputError(f"checkpoint truncated in {name}", path)
        arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shapes[name]).astype(np.float64)
        offset += 8 * count
    if offset != len(data):
        raise InputError("trailing bytes after checkpoint payload", path)
    return GatModel(**arrays, leaky_slope=slope, seed=seed)


def write_embeddings(path: str | Path, g: EventGraph, z: np.ndarray):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# vertex_name\t" + "\t".join(f"z{i}" for i in range(z.shape[1])) + "\n")
        for name, row in zip(g.names, z):
            fh.write(name + "\t" + "\t".join(repr(float(x)) for x in row) + "\n")


def read_embeddings(path: str | Path) -> tuple[list[str], np.ndarray]:
    names, rows = [], []
    for lineno, fields in iter_tsv(Path(path)):
        try:
            rows.append([float(x) for x in fields[1:]])
        except ValueError:
            raise InputError("non-numeric embedding entry", path, lineno) from None
        names.append(fields[0])
    if len({len(r) for r in rows}) > 1:
        raise InputError("embedding rows differ in width", path)
    return names, np.asarray(rows, dtype=np.float64)
