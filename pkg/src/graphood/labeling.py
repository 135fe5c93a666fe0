"""Intra-subgraph pseudo-label assignment.

For each subgraph the labeled percentage of a class is the number of members
labeled with that class (ground truth or earlier pseudo-labels) divided by
the full subgraph size. When the best class strictly exceeds the threshold,
every unlabeled member receives that class and moves to the labeled split;
ties for the best class assign nothing. Pseudo-labels are never revoked, so
the labeled set grows monotonically across epochs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, LABELED
from .errors import ValidationError


@dataclass(eq=False)
class SubgraphSummary:
    subgraph: int
    size: int
    best_class: int | None
    ratio: float
    assigned: bool


@dataclass(eq=False)
class LabelAssignmentReport:
    epoch: int
    per_subgraph: list
    newly_labeled: list  # (record id, class, epoch)


def labeled_percentage(member_labels):
    """Ratio of members carrying each class, over the full subgraph size."""
    member_labels = list(member_labels)
    if not member_labels:
        raise ValidationError("subgraph must be nonempty")
    total = len(member_labels)
    counts = {}
    for y in member_labels:
        if y is not None and y >= 0:
            counts[int(y)] = counts.get(int(y), 0) + 1
    return {y: c / total for y, c in sorted(counts.items())}


def _best_class(ratios):
    """Highest-ratio class, or None when the maximum is tied."""
    if not ratios:
        return None, 0.0
    best_r = max(ratios.values())
    winners = [y for y, r in ratios.items() if r == best_r]
    if len(winners) != 1:
        return None, best_r
    return winners[0], best_r


def assign_labels(assignment, dataset, rho, epoch):
    """Assign majority labels inside subgraphs whose ratio strictly exceeds rho.

    ``assignment`` maps dataset row index to subgraph index. Returns the
    updated dataset and a per-subgraph report.
    """
    if not 0.0 < rho < 1.0:
        raise ValidationError(f"rho must be strictly between 0 and 1, got {rho}")
    assignment = np.asarray(assignment, dtype=np.int64)
    if assignment.shape != (len(dataset),):
        raise ValidationError("assignment must have one entry per record")

    n_sub = int(assignment.max()) + 1
    members = [[] for _ in range(n_sub)]
    for row, sub in enumerate(assignment):
        members[sub].append(row)

    records = list(dataset.records)
    summaries = []
    newly = []
    for sub in range(n_sub):
        rows = members[sub]
        ratios = labeled_percentage([records[r].label for r in rows])
        best, ratio = _best_class(ratios)
        assigned = best is not None and ratio > rho
        if assigned:
            for r in rows:
                rec = records[r]
                if rec.label is None:
                    records[r] = replace(rec, split=LABELED, label=best)
                    newly.append((rec.id, best, epoch))
        summaries.append(SubgraphSummary(
            subgraph=sub, size=len(rows), best_class=best, ratio=ratio, assigned=assigned,
        ))
    return Dataset(records), LabelAssignmentReport(
        epoch=epoch, per_subgraph=summaries, newly_labeled=newly,
    )
