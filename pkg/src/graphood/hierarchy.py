"""Multi-level graph cut: decode, aggregate, rebuild, repeat.

Level 0 works on the raw features. Each level decodes its graph into
subgraphs, then every subgraph becomes one node of the next level carrying
two feature vectors: the identity feature (the peak node's identity feature)
and the average feature (mean of the member identity features). The next
level's input is their concatenation, so levels >= 1 have twice the level-0
dimension and get their own scorer.

The loop stops when a decode selects no edges, when fewer than two nodes
remain, when a cut would drop the subgraph count below ``k_target`` (the cut
is discarded), or at ``max_levels`` (flagged as not converged). Final
subgraph indices are assigned at the top level and propagated down to the
level-0 nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decode import decode_graph, singleton_partition
from .errors import ValidationError
from .knn import build_knn_graph
from .scorer import forward, init_scorer, train_scorer

STOP_EMPTY_CUT = "empty_cut"
STOP_SINGLE_NODE = "single_node"
STOP_K_TARGET = "k_target"
STOP_MAX_LEVELS = "max_levels"


@dataclass(frozen=True)
class HierarchyConfig:
    k: int = 10
    p_tau: float = 0.3
    hidden_dim: int = 64
    scorer_lr: float = 0.1
    scorer_steps: int = 15
    max_levels: int = 10
    k_target: int | None = None
    seed: int = 0

    def validate(self):
        if self.max_levels < 1:
            raise ValidationError(f"max_levels must be >= 1, got {self.max_levels}")
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if not 0.0 <= self.p_tau <= 1.0:
            raise ValidationError(f"p_tau must lie in [0, 1], got {self.p_tau}")
        if self.k_target is not None and self.k_target < 1:
            raise ValidationError(f"k_target must be >= 1, got {self.k_target}")


@dataclass(eq=False)
class HierarchyLevel:
    graph: object                 # AffinityGraph, or None for a degenerate 1-node level
    identity_features: np.ndarray
    average_features: np.ndarray
    input_features: np.ndarray
    partition: object             # SubgraphPartition
    member_map: list              # per-node arrays of level-0 node indices


@dataclass(eq=False)
class HierarchyResult:
    levels: list
    final_assignment: np.ndarray  # level-0 node -> final subgraph index
    n_levels: int
    converged: bool
    stop_reason: str

    def trace(self):
        """Per-level summary used by the hierarchy trace artifact."""
        return [
            {
                "nodes": len(lv.input_features),
                "selected_edges": int(len(lv.partition.selected_edges)),
                "subgraphs": int(lv.partition.n_subgraphs),
            }
            for lv in self.levels
        ]


def aggregate(level):
    """Next-level identity/average features and their concatenation."""
    part = level.partition
    m = part.n_subgraphs
    identity = level.identity_features[part.peaks]
    dim = level.identity_features.shape[1]
    average = np.zeros((m, dim))
    counts = np.bincount(part.assignment, minlength=m).astype(np.float64)
    if (counts == 0).any():
        raise ValidationError("empty subgraph in partition")
    np.add.at(average, part.assignment, level.identity_features)
    average /= counts[:, None]
    return identity, average, np.concatenate([identity, average], axis=1)


def _lift_members(member_map, assignment, m):
    grouped = [[] for _ in range(m)]
    for node, sub in enumerate(assignment):
        grouped[sub].append(member_map[node])
    return [np.sort(np.concatenate(g)) for g in grouped]


def _lift_labels(labels, assignment, m):
    """A merged node is labeled y iff all its labeled members agree on y."""
    out = np.full(m, -1, dtype=np.int64)
    conflict = np.zeros(m, dtype=bool)
    for node, sub in enumerate(assignment):
        y = labels[node]
        if y < 0 or conflict[sub]:
            continue
        if out[sub] == -1:
            out[sub] = y
        elif out[sub] != y:
            out[sub] = -1
            conflict[sub] = True
    return out


def _has_labeled_edge(graph, labels):
    src, dst = graph.edges()
    return bool(((labels[src] >= 0) & (labels[dst] >= 0)).any())


def run_hierarchy(features, labels, cfg, scorers=None, train=True, level0_graph=None):
    """Run the multi-level loop and propagate top-level indices to level 0.

    ``labels`` holds class indices for labeled level-0 nodes and -1
    elsewhere; they supervise scorer training at level 0 and, lifted by
    unanimity, at deeper levels. ``scorers`` maps input dimension to scorer
    parameters (one per dimension, shared across levels) and is updated in
    place; each scorer gets a training round at every level that has a
    fully-labeled edge, so callers can warm-start across epochs.

    Returns (HierarchyResult, scorers).
    """
    cfg.validate()
    X = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = X.shape[0]
    if labels.shape != (n,):
        raise ValidationError("labels must align with features")
    if scorers is None:
        scorers = {}

    identity = X
    average = X
    inputs = X
    member_map = [np.array([i], dtype=np.int64) for i in range(n)]
    level_labels = labels
    levels = []
    stop_reason = STOP_MAX_LEVELS

    for _ in range(cfg.max_levels):
        m = inputs.shape[0]
        if m < 2:
            levels.append(HierarchyLevel(
                graph=None, identity_features=identity, average_features=average,
                input_features=inputs, partition=singleton_partition(m),
                member_map=member_map,
            ))
            stop_reason = STOP_SINGLE_NODE
            break

        k_eff = min(cfg.k, m - 1)
        if level0_graph is not None and len(levels) == 0:
            graph = level0_graph
        else:
            graph = build_knn_graph(inputs, k_eff, level=len(levels))

        dim = inputs.shape[1]
        params = scorers.get(dim)
        if params is None:
            params = init_scorer(dim, cfg.hidden_dim, cfg.seed)
            scorers[dim] = params
        if train and _has_labeled_edge(graph, level_labels):
            params, _ = train_scorer(params, graph, inputs, level_labels,
                                     cfg.scorer_lr, cfg.scorer_steps)
            scorers[dim] = params

        ld = forward(params, graph, inputs)
        part = decode_graph(graph, ld, cfg.p_tau)

        if cfg.k_target is not None and part.n_subgraphs < cfg.k_target:
            part = singleton_partition(m)
            levels.append(HierarchyLevel(
                graph=graph, identity_features=identity, average_features=average,
                input_features=inputs, partition=part, member_map=member_map,
            ))
            stop_reason = STOP_K_TARGET
            break

        level = HierarchyLevel(
            graph=graph, identity_features=identity, average_features=average,
            input_features=inputs, partition=part, member_map=member_map,
        )
        levels.append(level)

        if len(part.selected_edges) == 0:
            stop_reason = STOP_EMPTY_CUT
            break

        identity, average, inputs = aggregate(level)
        member_map = _lift_members(member_map, part.assignment, part.n_subgraphs)
        level_labels = _lift_labels(level_labels, part.assignment, part.n_subgraphs)

    final = levels[-1].partition.assignment
    for level in reversed(levels[:-1]):
        final = final[level.partition.assignment]

    return HierarchyResult(
        levels=levels,
        final_assignment=final,
        n_levels=len(levels),
        converged=stop_reason != STOP_MAX_LEVELS,
        stop_reason=stop_reason,
    ), scorers
