"""2-D PCA projection of embeddings and an SVG scatter view."""

from __future__ import annotations

import logging
from html import escape
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .graph import iter_tsv

log = logging.getLogger(__name__)

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#bcbd22", "#17becf", "#393b79",
)
NEUTRAL = "#b0b0b0"


def principal_axes(z: np.ndarray, k: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Top-``k`` principal directions (rows) of mean-centered ``z`` and their singular values.

    Each direction's largest-magnitude loading is made positive.
    """
    zc = z - z.mean(axis=0)
    _, s, vt = np.linalg.svd(zc, full_matrices=False)
    axes = vt[:k].copy()
    for row in axes:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    return axes, s[:k]


def project_2d(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2 or z.shape[1] < 2:
        raise ValueError(f"need at least 2 rows and 2 columns, got shape {z.shape}")
    axes, s = principal_axes(z, 2)
    coords = (z - z.mean(axis=0)) @ axes.T
    eps = max(z.shape) * np.finfo(np.float64).eps
    if s[0] <= eps * np.sqrt(z.shape[0]) * float(np.abs(z).max()):
        log.warning("embeddings have rank 0; all points projected to the origin")
        return np.zeros((z.shape[0], 2))
    # directions carrying only roundoff variance
    coords[:, s <= eps * s[0]] = 0.0
    return coords


def emit_scatter(
    coords,
    labels: Mapping[int, str],
    path: str | Path,
    names: Sequence[str] | None = None,
    title: str = "",
) -> Path:
    """Write one circle per row of ``coords``; labeled rows are colored by class.

    Rows missing from ``labels`` are drawn in neutral gray. The legend has one
    entry per distinct class name.
    """
    coords = np.asarray(coords, dtype=np.float64)
    path = Path(path)
    classes = sorted(set(labels.values()))
    color = {c: PALETTE[i % len(PALETTE)] for i, c in enumerate(classes)}

    width, height, margin, legend_w = 640, 480, 30, 140
    plot_w = width - legend_w - 2 * margin
    plot_h = height - 2 * margin
    if len(coords):
        lo, hi = coords.min(axis=0), coords.max(axis=0)
    else:
        lo, hi = np.zeros(2), np.ones(2)
    span = np.where(hi - lo > 0, hi - lo, 1.0)

    def xy(p):
        x = margin + (p[0] - lo[0]) / span[0] * plot_w
        y = height - margin - (p[1] - lo[1]) / span[1] * plot_h
        return x, y

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{margin}" y="{margin - 10}" font-size="14">{escape(title)}</text>')
    # gray markers first so class markers are drawn on top
    order = sorted(range(len(coords)), key=lambda i: i in labels)
    for i in order:
        x, y = xy(coords[i])
        fill = color[labels[i]] if i in labels else NEUTRAL
        tip = escape(names[i]) if names is not None else str(i)
        out.append(f'<circle class="marker" cx="{x:.2f}" cy="{y:.2f}" r="4" fill="{fill}"><title>{tip}</title></circle>')
    lx = width - legend_w
    for j, c in enumerate(classes):
        ly = margin + 18 * j
        out.append(
            f'<g class="legend-entry"><circle cx="{lx:.0f}" cy="{ly:.0f}" r="5" fill="{color[c]}"/>'
            f'<text x="{lx + 10:.0f}" y="{ly + 4:.0f}" font-size="12">{escape(c)}</text></g>'
        )
    out.append("</svg>")
    path.write_text("\n".join(out) + "\n", encoding="utf-8")
    return path


def separation_statistic(coords: np.ndarray, groups: Mapping[int, str]) -> tuple[float, float]:
    """(min distance between class centroids, mean within-class radius)."""
    classes = sorted(set(groups.values()))
    centroids, radii = [], []
    for c in classes:
        pts = coords[[i for i, k in groups.items() if k == c]]
        mu = pts.mean(axis=0)
        centroids.append(mu)
        radii.extend(np.linalg.norm(pts - mu, axis=1))
    centroids = np.array(centroids)
    dists = [np.linalg.norm(centroids[a] - centroids[b]) for a in range(len(classes)) for b in range(a + 1, len(classes))]
    return float(min(dists)), float(np.mean(radii))


def read_projection(path: str | Path) -> tuple[list[str], np.ndarray]:
    names, rows = [], []
    for _, fields in iter_tsv(Path(path)):
        names.append(fields[0])
        rows.append([float(fields[1]), float(fields[2])])
    return names, np.asarray(rows)


def write_projection(path: str | Path, names: Sequence[str], coords: np.ndarray):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# vertex_name\tx\ty\n")
        for name, (x, y) in zip(names, coords):
            fh.write(f"{name}\t{float(x)!r}\t{float(y)!r}\n")
