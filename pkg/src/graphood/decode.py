"""Graph decoding: candidate edges, edge selection, and subgraph extraction.

A node's candidate set holds the neighbors that pass the linkage threshold
and do not have lower density than the node itself. Each node with a
non-empty candidate set contributes exactly one outgoing edge (the candidate
with the largest edge coefficient); nodes with empty candidate sets become
peak nodes. Connected components of the selected edges, viewed undirected,
are the subgraphs.

Node visit order and every tie-break are lowest-index-first, which makes the
decode a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ValidationError


@dataclass(eq=False)
class SubgraphPartition:
    """Node-to-subgraph assignment with the selected edge set and peaks.

    Subgraph indices are assigned in order of each component's lowest node
    index; ``peaks[s]`` is the maximum-density node of subgraph s (ties to
    the lowest node index).
    """

    assignment: np.ndarray      # (n,) int64, values in 0..M-1
    selected_edges: np.ndarray  # (m, 2) int64 (src, dst), ascending src
    peaks: np.ndarray           # (M,) int64
    n_subgraphs: int

    def sizes(self):
        return np.bincount(self.assignment, minlength=self.n_subgraphs)


def singleton_partition(n, densities=None):
    """Every node its own subgraph (the empty-selection decode)."""
    return SubgraphPartition(
        assignment=np.arange(n, dtype=np.int64),
        selected_edges=np.empty((0, 2), dtype=np.int64),
        peaks=np.arange(n, dtype=np.int64),
        n_subgraphs=n,
    )


def candidate_set(node, graph, ld, p_tau):
    """Neighbors j of ``node`` with p >= p_tau and density(node) <= density(j).

    Both comparisons are non-strict.
    """
    if not 0.0 <= p_tau <= 1.0:
        raise ValidationError(f"p_tau must lie in [0, 1], got {p_tau}")
    nbr = graph.neighbors[node]
    ok = (ld.p[node] >= p_tau) & (ld.d[node] <= ld.d[nbr])
    return set(int(j) for j in nbr[ok])


def decode_graph(graph, ld, p_tau):
    """Select at most one outgoing edge per node and split into subgraphs."""
    if not 0.0 <= p_tau <= 1.0:
        raise ValidationError(f"p_tau must lie in [0, 1], got {p_tau}")
    n = graph.n
    d = ld.d
    edges = []
    for i in range(n):
        nbr = graph.neighbors[i]
        ok = (ld.p[i] >= p_tau) & (d[i] <= d[nbr])
        if not ok.any():
            continue
        cand = nbr[ok]
        coeff = ld.e[i][ok]
        # Largest coefficient wins; ties go to the lowest neighbor index.
        best = cand[np.lexsort((cand, -coeff))[0]]
        edges.append((i, int(best)))

    parent = np.arange(n, dtype=np.int64)

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj

    assignment = np.full(n, -1, dtype=np.int64)
    next_idx = 0
    root_to_idx = {}
    for i in range(n):
        root = find(i)
        if root not in root_to_idx:
            root_to_idx[root] = next_idx
            next_idx += 1
        assignment[i] = root_to_idx[root]

    peaks = np.full(next_idx, -1, dtype=np.int64)
    for i in range(n):
        s = assignment[i]
        if peaks[s] < 0 or d[i] > d[peaks[s]]:
            peaks[s] = i

    sel = np.array(edges, dtype=np.int64).reshape(-1, 2)
    return SubgraphPartition(assignment=assignment, selected_edges=sel,
                             peaks=peaks, n_subgraphs=next_idx)


def save_partition(partition, ids, path):
    """Dump ``node_id,subgraph,is_peak`` rows in dataset order."""
    peak_set = set(int(p) for p in partition.peaks)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("node_id,subgraph,is_peak\n")
        for row, rid in enumerate(ids):
            fh.write(f"{rid},{partition.assignment[row]},{int(row in peak_set)}\n")


def load_assignment(path, ids):
    """Read a partition dump back into a node->subgraph array aligned with ``ids``."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "node_id,subgraph,is_peak":
        raise ParseError("partition header must be 'node_id,subgraph,is_peak'", line=1)
    by_id = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw:
            continue
        cols = raw.split(",")
        if len(cols) != 3:
            raise ParseError("expected 3 columns", line=lineno)
        try:
            by_id[int(cols[0])] = int(cols[1])
        except ValueError:
            raise ParseError("malformed partition row", line=lineno) from None
    try:
        return np.array([by_id[int(i)] for i in ids], dtype=np.int64)
    except KeyError as exc:
        raise ValidationError(f"partition file is missing node id {exc.args[0]}") from None
