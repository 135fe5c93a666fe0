"""Exact cosine k-nearest-neighbor affinity graphs.

Search is brute force over the full similarity matrix, which keeps the result
exact and deterministic at the scales this package targets. Neighbor lists
are directed: j appearing in i's list does not imply the converse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ValidationError

FLOAT_FMT = "%.17g"


@dataclass(eq=False)
class AffinityGraph:
    """Directed k-NN graph with cosine affinities.

    ``neighbors[i]`` holds i's k nearest nodes ordered by descending
    affinity, ties broken by ascending node index; ``affinities`` is aligned.
    """

    n: int
    k: int
    neighbors: np.ndarray   # (n, k) int64
    affinities: np.ndarray  # (n, k) float64
    level: int = 0

    def __post_init__(self):
        if self.neighbors.shape != (self.n, self.k):
            raise ValidationError("neighbor array shape mismatch")
        if self.affinities.shape != (self.n, self.k):
            raise ValidationError("affinity array shape mismatch")
        if (self.neighbors == np.arange(self.n)[:, None]).any():
            raise ValidationError("self-edges are not allowed")

    def edges(self):
        """Directed edge list as (src, dst) arrays in row-major list order."""
        src = np.repeat(np.arange(self.n), self.k)
        return src, self.neighbors.ravel()


def cosine_similarity(u, v):
    """Cosine of the angle between two nonzero vectors of equal dimension."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValidationError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValidationError("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def build_knn_graph(features, k, level=0):
    """Exact cosine k-NN graph over the rows of ``features``.

    Requires 1 <= k <= n-1; an out-of-range k is an error rather than being
    clamped silently.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        X = np.stack([np.asarray(f, dtype=np.float64) for f in features])
    n = X.shape[0]
    if n < 2:
        raise ValidationError(f"need at least 2 nodes, got {n}")
    if not 1 <= k <= n - 1:
        raise ValidationError(f"k must satisfy 1 <= k <= n-1 = {n - 1}, got {k}")
    norms = np.linalg.norm(X, axis=1)
    if (norms == 0).any():
        raise ValidationError(f"zero feature vector at row {int(np.argmin(norms))}")
    Xn = X / norms[:, None]
    sim = np.clip(Xn @ Xn.T, -1.0, 1.0)
    # Self-affinity below any cosine ranks self last; stable sort keeps ties
    # in ascending-index order.
    np.fill_diagonal(sim, -2.0)
    order = np.argsort(-sim, axis=1, kind="stable")
    nbr = order[:, :k]
    aff = np.take_along_axis(sim, nbr, axis=1)
    return AffinityGraph(n=n, k=k, neighbors=nbr.astype(np.int64),
                         affinities=aff, level=level)


def save_graph(graph, path):
    """Debugging dump: one ``src,dst,affinity`` row per directed edge."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("src,dst,affinity\n")
        for i in range(graph.n):
            for j, a in zip(graph.neighbors[i], graph.affinities[i]):
                fh.write(f"{i},{j},{FLOAT_FMT % a}\n")


def load_graph(path, level=0):
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "src,dst,affinity":
        raise ParseError("graph header must be 'src,dst,affinity'", line=1)
    src, dst, aff = [], [], []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw:
            continue
        cols = raw.split(",")
        if len(cols) != 3:
            raise ParseError("expected 3 columns", line=lineno)
        try:
            src.append(int(cols[0]))
            dst.append(int(cols[1]))
            aff.append(float(cols[2]))
        except ValueError:
            raise ParseError("malformed edge row", line=lineno) from None
    if not src:
        raise ParseError("graph file has no edges", line=2)
    src = np.array(src)
    dst = np.array(dst)
    aff = np.array(aff)
    n = int(max(src.max(), dst.max())) + 1
    counts = np.bincount(src, minlength=n)
    if counts.min() != counts.max():
        raise ParseError("all nodes must have the same out-degree")
    k = int(counts[0])
    if not (src == np.repeat(np.arange(n), k)).all():
        raise ParseError("rows must be grouped by ascending src")
    return AffinityGraph(n=n, k=k, neighbors=dst.reshape(n, k).astype(np.int64),
                         affinities=aff.reshape(n, k), level=level)
