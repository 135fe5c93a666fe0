"""Independent brute-force oracles used to pin down implementation behavior.

Everything here is written as directly as possible (full sorts, exhaustive
threshold scans, pairwise loops) and deliberately shares no code with the
implementations it checks.
"""

import numpy as np


def knn_oracle(features, k):
    """Full-sort cosine k-NN per node; returns (neighbors, affinities)."""
    X = np.asarray(features, dtype=np.float64)
    n = X.shape[0]
    nbr = np.empty((n, k), dtype=np.int64)
    aff = np.empty((n, k))
    for i in range(n):
        sims = []
        for j in range(n):
            if j == i:
                continue
            a = float(np.dot(X[i], X[j]) / (np.linalg.norm(X[i]) * np.linalg.norm(X[j])))
            sims.append((min(max(a, -1.0), 1.0), j))
        sims.sort(key=lambda t: (-t[0], t[1]))
        nbr[i] = [j for _, j in sims[:k]]
        aff[i] = [a for a, _ in sims[:k]]
    return nbr, aff


def density_oracle(graph, p):
    """Recompute densities edge by edge from linkage probabilities."""
    n, k = graph.n, graph.k
    d = np.zeros(n)
    for i in range(n):
        total = 0.0
        for slot in range(k):
            total += (2.0 * p[i, slot] - 1.0) * graph.affinities[i, slot]
        d[i] = total / k
    return d


def candidate_sets_oracle(graph, p, dens, p_tau):
    out = []
    for i in range(graph.n):
        zs = set()
        for slot in range(graph.k):
            j = int(graph.neighbors[i, slot])
            if p[i, slot] >= p_tau and dens[i] <= dens[j]:
                zs.add(j)
        out.append(zs)
    return out


def fpr_at_tpr_oracle(id_scores, ood_scores, tpr):
    """Scan every candidate threshold; keep the largest one meeting the TPR."""
    ids = np.asarray(id_scores, dtype=np.float64)
    oods = np.asarray(ood_scores, dtype=np.float64)
    candidates = sorted(set(np.nextafter(v, -np.inf) for v in np.concatenate([ids, oods]))
                        | set(np.concatenate([ids, oods])))
    best = None
    for thr in candidates:
        if (ids > thr).mean() >= tpr:
            best = thr if best is None else max(best, thr)
    assert best is not None
    return float((oods > best).mean())


def auroc_oracle(id_scores, ood_scores):
    """Direct pair enumeration with half-credit ties."""
    ids = np.asarray(id_scores, dtype=np.float64)[:, None]
    oods = np.asarray(ood_scores, dtype=np.float64)[None, :]
    wins = (ids > oods).sum()
    ties = (ids == oods).sum()
    return float((wins + 0.5 * ties) / (ids.size * oods.size))


def aupr_oracle(id_scores, ood_scores, positive):
    """Step-curve area computed by scanning each distinct threshold."""
    ids = np.asarray(id_scores, dtype=np.float64)
    oods = np.asarray(ood_scores, dtype=np.float64)
    if positive == "in":
        pos, neg = ids, oods
    else:
        pos, neg = -oods, -ids
    thresholds = sorted(set(np.concatenate([pos, neg])), reverse=True)
    area = 0.0
    prev_recall = 0.0
    for thr in thresholds:
        tp = (pos >= thr).sum()
        fp = (neg >= thr).sum()
        if tp + fp == 0:
            continue
        recall = tp / pos.size
        precision = tp / (tp + fp)
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return float(area)


def ccr_oracle(id_scores, id_correct, ood_scores, max_fpr):
    """Exhaustive threshold scan maximizing CCR subject to the FPR budget."""
    ids = np.asarray(id_scores, dtype=np.float64)
    correct = np.asarray(id_correct, dtype=bool)
    oods = np.asarray(ood_scores, dtype=np.float64)
    all_scores = np.concatenate([ids, oods])
    candidates = set(all_scores) | set(np.nextafter(v, -np.inf) for v in all_scores)
    candidates.add(float(all_scores.min() - 1.0))
    best = 0.0
    for thr in candidates:
        if (oods > thr).mean() <= max_fpr:
            best = max(best, float(((ids > thr) & correct).mean()))
    return best


def final_assignment_oracle(levels):
    """Recompute level-0 assignments by walking member maps at the top level."""
    top = levels[-1]
    n0 = sum(len(m) for m in top.member_map)
    out = np.full(n0, -1, dtype=np.int64)
    for node, sub in enumerate(top.partition.assignment):
        for base in top.member_map[node]:
            out[base] = sub
    assert (out >= 0).all()
    return out


def partition_purity(assignment, categories):
    """Fraction of samples in their subgraph's majority category."""
    assignment = np.asarray(assignment)
    categories = np.asarray(categories)
    total = 0
    for s in np.unique(assignment):
        _, counts = np.unique(categories[assignment == s], return_counts=True)
        total += counts.max()
    return total / len(categories)
