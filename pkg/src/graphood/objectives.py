"""Classifier head, training losses, and the per-epoch training loop.

The classifier projects embeddings into a hidden space with a tanh
nonlinearity (the projected features feed both the class logits and the
contrastive loss) and a linear head produces class logits. Four losses are
combined per epoch:

    total = L0 + beta * L1 + alpha * L2 + gamma * L0L

where L0 is cross-entropy over the growing labeled set, L1 pushes the
remaining unlabeled samples toward the uniform posterior, L2 is the
contrastive loss over two feature-space augmented views of every sample,
and L0L is cross-entropy restricted to the originally labeled set.

L2 defaults to the sum-inside-log form

    -sum_i log( exp(c_ii)/sum_j exp(cos(b0_i, b1_j))
              + exp(c_ii)/sum_g exp(cos(b1_i, b0_g)) ),   c_ii = cos(b0_i, b1_i)

which can be negative; ``form="split"`` selects the conventional two-term
variant for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import load_tensors, save_tensors
from .data import LABELED
from .errors import NumericError, ValidationError
from .hierarchy import HierarchyConfig, run_hierarchy
from .knn import build_knn_graph
from .labeling import assign_labels
from .seeding import STREAM_AUGMENT, STREAM_CLASSIFIER_INIT, stream_seed, substream

PROB_FLOOR = 1e-12


@dataclass(eq=False)
class ClassifierParams:
    proj_w: np.ndarray  # (d, h)
    proj_b: np.ndarray  # (h,)
    head_w: np.ndarray  # (h, R)
    head_b: np.ndarray  # (R,)
    seed: int


def init_classifier(input_dim, hidden_dim, n_classes, seed):
    if input_dim < 1 or hidden_dim < 1 or n_classes < 1:
        raise ValidationError(
            "input_dim, hidden_dim and n_classes must all be >= 1, got "
            f"{input_dim}, {hidden_dim}, {n_classes}"
        )
    rng = substream(seed, STREAM_CLASSIFIER_INIT)
    return ClassifierParams(
        proj_w=rng.standard_normal((input_dim, hidden_dim)) / np.sqrt(input_dim),
        proj_b=np.zeros(hidden_dim),
        head_w=rng.standard_normal((hidden_dim, n_classes)) / np.sqrt(hidden_dim),
        head_b=np.zeros(n_classes),
        seed=seed,
    )


def classifier_forward(params, X):
    """Projected features, class logits, and softmax probabilities."""
    X = np.asarray(X, dtype=np.float64)
    b = np.tanh(X @ params.proj_w + params.proj_b)
    logits = b @ params.head_w + params.head_b
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    if not np.isfinite(probs).all():
        raise NumericError("non-finite classifier output")
    return b, logits, probs


def _check_probs(probs):
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValidationError("probs must be a (n, R) matrix")
    if np.abs(probs.sum(axis=1) - 1.0).max() > 1e-9:
        raise ValidationError("probability rows must sum to 1 within 1e-9")
    return probs


def classification_loss(probs, labels):
    """Mean negative log-probability of the true class, floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size == 0:
        raise ValidationError("classification loss over an empty sample set")
    probs = _check_probs(probs)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise ValidationError("label out of range")
    p_true = probs[np.arange(len(labels)), labels]
    return float(-np.log(np.maximum(p_true, PROB_FLOOR)).mean())


def equalization_loss(probs, n_classes):
    """Mean cross-entropy to the uniform distribution; 0 on an empty set."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size == 0:
        return 0.0
    probs = _check_probs(probs)
    if probs.shape[1] != n_classes:
        raise ValidationError(f"probs have {probs.shape[1]} classes, expected {n_classes}")
    logs = np.log(np.maximum(probs, PROB_FLOOR))
    return float(-(logs.mean(axis=1)).mean())


def augment_pair(feature, seed, noise_sigma, drop_prob):
    """Two views of a feature: Gaussian noise plus coordinate zero-masking.

    Deterministic in ``seed``; with noise_sigma=0 and drop_prob=0 both views
    equal the input.
    """
    if noise_sigma < 0:
        raise ValidationError(f"noise_sigma must be >= 0, got {noise_sigma}")
    if not 0.0 <= drop_prob < 1.0:
        raise ValidationError(f"drop_prob must lie in [0, 1), got {drop_prob}")
    feature = np.asarray(feature, dtype=np.float64)
    rng = substream(seed, STREAM_AUGMENT)
    views = []
    for _ in range(2):
        noise = rng.standard_normal(feature.shape) * noise_sigma
        keep = rng.random(feature.shape) >= drop_prob
        views.append(np.where(keep, feature + noise, 0.0))
    return views[0], views[1]


def _cosine_matrix(b0, b1):
    n0 = np.linalg.norm(b0, axis=1)
    n1 = np.linalg.norm(b1, axis=1)
    if (n0 == 0).any() or (n1 == 0).any():
        raise ValidationError("contrastive loss is undefined for zero vectors")
    return (b0 / n0[:, None]) @ (b1 / n1[:, None]).T


def infonce_loss(views0, views1, form="printed"):
    """Contrastive loss over paired batches of projected view features."""
    b0 = np.asarray(views0, dtype=np.float64)
    b1 = np.asarray(views1, dtype=np.float64)
    if b0.shape != b1.shape or b0.ndim != 2 or b0.shape[0] < 1:
        raise ValidationError("views must be equal-shape (n, h) matrices with n >= 1")
    cos = _cosine_matrix(b0, b1)
    exp = np.exp(cos)
    pos = np.diag(exp)
    denom0 = exp.sum(axis=1)   # over view-1 partners of each view-0 sample
    denom1 = exp.sum(axis=0)   # over view-0 partners of each view-1 sample
    if form == "printed":
        return float(-np.log(pos / denom0 + pos / denom1).sum())
    if form == "split":
        return float(-(np.log(pos / denom0) + np.log(pos / denom1)).sum())
    raise ValidationError(f"unknown contrastive form {form!r}")


def total_loss(l0, l1, l2, l0l, weights):
    """Weighted sum: l0 + beta*l1 + alpha*l2 + gamma*l0l."""
    for name, v in (("l0", l0), ("l1", l1), ("l2", l2), ("l0l", l0l)):
        if not np.isfinite(v):
            raise ValidationError(f"{name} must be finite, got {v}")
    return float(l0 + weights.beta * l1 + weights.alpha * l2 + weights.gamma * l0l)


# ---------------------------------------------------------------------------
# analytic gradients

def _zero_grads(params):
    return ClassifierParams(
        proj_w=np.zeros_like(params.proj_w), proj_b=np.zeros_like(params.proj_b),
        head_w=np.zeros_like(params.head_w), head_b=np.zeros_like(params.head_b),
        seed=params.seed,
    )


def _accumulate_from_dlogits(params, X, b, dlogits, grads):
    grads.head_w += b.T @ dlogits
    grads.head_b += dlogits.sum(axis=0)
    db = dlogits @ params.head_w.T
    dz = db * (1.0 - b ** 2)
    grads.proj_w += X.T @ dz
    grads.proj_b += dz.sum(axis=0)


def supervised_objective(params, X, labeled_idx, labels, unlabeled_idx,
                         orig_idx, orig_labels, weights, compute_grad=True):
    """L0 + beta*L1 + gamma*L0L with exact gradients w.r.t. the classifier.

    ``labels`` / ``orig_labels`` align with ``labeled_idx`` / ``orig_idx``.
    Returns (l0, l1, l0l, grads).
    """
    X = np.asarray(X, dtype=np.float64)
    labeled_idx = np.asarray(labeled_idx, dtype=np.int64)
    unlabeled_idx = np.asarray(unlabeled_idx, dtype=np.int64)
    orig_idx = np.asarray(orig_idx, dtype=np.int64)
    if labeled_idx.size == 0 or orig_idx.size == 0:
        raise ValidationError("classification loss over an empty sample set")
    n_classes = params.head_b.size
    b, _, probs = classifier_forward(params, X)

    l0 = classification_loss(probs[labeled_idx], labels)
    l1 = equalization_loss(probs[unlabeled_idx], n_classes)
    l0l = classification_loss(probs[orig_idx], orig_labels)
    if not compute_grad:
        return l0, l1, l0l, None

    grads = _zero_grads(params)

    def ce_dlogits(idx, y):
        d = probs[idx].copy()
        d[np.arange(len(y)), y] -= 1.0
        # The probability floor only bites when p_true underflows; its
        # subgradient there is zero.
        floored = probs[idx, y] <= PROB_FLOOR
        d[floored] = 0.0
        return d / len(y)

    dl = ce_dlogits(labeled_idx, np.asarray(labels, dtype=np.int64))
    _accumulate_from_dlogits(params, X[labeled_idx], b[labeled_idx], dl, grads)

    if unlabeled_idx.size:
        pu = probs[unlabeled_idx]
        active = pu > PROB_FLOOR  # coordinates below the floor have zero subgradient
        du = pu * (active.sum(axis=1, keepdims=True) / n_classes) - active / n_classes
        du = du / len(unlabeled_idx) * weights.beta
        _accumulate_from_dlogits(params, X[unlabeled_idx], b[unlabeled_idx], du, grads)

    dg = ce_dlogits(orig_idx, np.asarray(orig_labels, dtype=np.int64)) * weights.gamma
    _accumulate_from_dlogits(params, X[orig_idx], b[orig_idx], dg, grads)
    return l0, l1, l0l, grads


def contrastive_objective(params, aug0, aug1, form="printed", weight=1.0,
                          compute_grad=True):
    """L2 over projected augmented views, with gradients w.r.t. the projection."""
    aug0 = np.asarray(aug0, dtype=np.float64)
    aug1 = np.asarray(aug1, dtype=np.float64)
    b0 = np.tanh(aug0 @ params.proj_w + params.proj_b)
    b1 = np.tanh(aug1 @ params.proj_w + params.proj_b)
    l2 = infonce_loss(b0, b1, form=form)
    if not compute_grad:
        return l2, None

    n0 = np.linalg.norm(b0, axis=1)
    n1 = np.linalg.norm(b1, axis=1)
    u0 = b0 / n0[:, None]
    u1 = b1 / n1[:, None]
    cos = u0 @ u1.T
    exp = np.exp(cos)
    pos = np.diag(exp)
    denom0 = exp.sum(axis=1)
    denom1 = exp.sum(axis=0)
    if form == "printed":
        s = pos * (1.0 / denom0 + 1.0 / denom1)
        dcos = exp * (pos / (s * denom0 ** 2))[:, None]
        dcos += exp * (pos / (s * denom1 ** 2))[None, :]
        np.fill_diagonal(dcos, np.diag(dcos) - 1.0)
    else:
        dcos = exp / denom0[:, None] + exp / denom1[None, :]
        np.fill_diagonal(dcos, np.diag(dcos) - 2.0)

    du0 = dcos @ u1
    du1 = dcos.T @ u0
    db0 = (du0 - (du0 * u0).sum(axis=1, keepdims=True) * u0) / n0[:, None]
    db1 = (du1 - (du1 * u1).sum(axis=1, keepdims=True) * u1) / n1[:, None]

    grads = _zero_grads(params)
    for aug, b, db in ((aug0, b0, db0), (aug1, b1, db1)):
        dz = db * (1.0 - b ** 2) * weight
        grads.proj_w += aug.T @ dz
        grads.proj_b += dz.sum(axis=0)
    return l2, grads


def _add_grads(a, b):
    a.proj_w += b.proj_w
    a.proj_b += b.proj_b
    a.head_w += b.head_w
    a.head_b += b.head_b
    return a


def _step(params, grads, lr):
    return ClassifierParams(
        proj_w=params.proj_w - lr * grads.proj_w,
        proj_b=params.proj_b - lr * grads.proj_b,
        head_w=params.head_w - lr * grads.head_w,
        head_b=params.head_b - lr * grads.head_b,
        seed=params.seed,
    )


# ---------------------------------------------------------------------------
# training loop

@dataclass(eq=False)
class EpochReport:
    epoch: int
    l0: float
    l1: float
    l2: float
    l0l: float
    total: float
    newly_labeled: int
    subgraphs: int

    def to_json_dict(self):
        return {
            "epoch": self.epoch, "L0": self.l0, "L1": self.l1, "L2": self.l2,
            "L0L": self.l0l, "total": self.total,
            "newly_labeled": self.newly_labeled, "subgraphs": self.subgraphs,
        }


@dataclass(eq=False)
class TrainResult:
    params: ClassifierParams
    scorers: dict
    epochs: list            # EpochReport per epoch
    pseudo_rows: list       # (record id, class, epoch)
    hierarchy_traces: list  # per-epoch dicts for the trace artifact
    dataset: object         # dataset with pseudo-labels applied


def augment_all(features, ids, epoch, seed, noise_sigma, drop_prob):
    """Both augmented views for every record, seeded per (id, epoch)."""
    v0 = np.empty_like(features)
    v1 = np.empty_like(features)
    for row, rid in enumerate(ids):
        pair_seed = stream_seed(seed, STREAM_AUGMENT, epoch, int(rid))
        v0[row], v1[row] = augment_pair(features[row], pair_seed, noise_sigma, drop_prob)
    return v0, v1


def run_training(dataset, cfg):
    """Per-epoch loop: graph cut, pseudo-labeling, one gradient step.

    The dataset must already be feature-normalized. Stops at ``max_epochs``
    or once the relative improvement of the total loss stays below ``tol``
    for ``patience`` consecutive epochs.
    """
    cfg.validate()
    n_classes = dataset.n_classes()
    if n_classes < 1:
        raise ValidationError("dataset has no labeled samples")
    present = {rec.label for rec in dataset if rec.split == LABELED}
    missing = sorted(set(range(n_classes)) - present)
    if missing:
        raise ValidationError(f"no labeled sample for class(es) {missing}")

    X = dataset.feature_matrix()
    ids = dataset.ids()
    orig_idx = np.flatnonzero(dataset.labeled_mask())
    orig_labels = dataset.label_array()[orig_idx]
    weights = cfg.weights()

    hcfg = HierarchyConfig(
        k=cfg.k, p_tau=cfg.p_tau, hidden_dim=cfg.hidden_dim,
        scorer_lr=cfg.scorer_lr, scorer_steps=cfg.scorer_steps,
        max_levels=cfg.max_levels, k_target=cfg.k_target, seed=cfg.seed,
    )
    # Level-0 features never change, so its graph is shared by every epoch.
    level0_graph = build_knn_graph(X, min(cfg.k, len(dataset) - 1)) if len(dataset) > 1 else None

    params = init_classifier(dataset.dim, cfg.hidden_dim, n_classes, cfg.seed)
    scorers = {}
    ds_cur = dataset
    epochs = []
    pseudo_rows = []
    traces = []
    prev_total = None
    stall = 0

    for epoch in range(1, cfg.max_epochs + 1):
        labels_cur = ds_cur.label_array()
        hres, scorers = run_hierarchy(X, labels_cur, hcfg, scorers=scorers,
                                      level0_graph=level0_graph)
        traces.append({
            "epoch": epoch,
            "levels": hres.trace(),
            "converged": hres.converged,
            "stop_reason": hres.stop_reason,
        })
        ds_cur, report = assign_labels(hres.final_assignment, ds_cur, cfg.rho, epoch)
        pseudo_rows.extend(report.newly_labeled)

        labels_cur = ds_cur.label_array()
        lab_idx = np.flatnonzero(ds_cur.labeled_mask())
        unlab_idx = np.flatnonzero(~ds_cur.labeled_mask())

        aug0, aug1 = augment_all(X, ids, epoch, cfg.seed, cfg.noise_sigma, cfg.drop_prob)
        l0, l1, l0l, grads = supervised_objective(
            params, X, lab_idx, labels_cur[lab_idx], unlab_idx,
            orig_idx, orig_labels, weights,
        )
        l2, g2 = contrastive_objective(params, aug0, aug1, form=cfg.infonce_form,
                                       weight=weights.alpha)
        grads = _add_grads(grads, g2)
        total = total_loss(l0, l1, l2, l0l, weights)
        epochs.append(EpochReport(
            epoch=epoch, l0=l0, l1=l1, l2=l2, l0l=l0l, total=total,
            newly_labeled=len(report.newly_labeled),
            subgraphs=int(hres.final_assignment.max()) + 1,
        ))
        params = _step(params, grads, cfg.lr)

        if prev_total is not None:
            improvement = (prev_total - total) / max(abs(prev_total), 1e-12)
            stall = stall + 1 if improvement < cfg.tol else 0
            if stall >= cfg.patience:
                break
        prev_total = total

    return TrainResult(params=params, scorers=scorers, epochs=epochs,
                       pseudo_rows=pseudo_rows, hierarchy_traces=traces,
                       dataset=ds_cur)


def save_classifier(params, path):
    save_tensors({
        "proj.w": params.proj_w, "proj.b": params.proj_b,
        "head.w": params.head_w, "head.b": params.head_b,
        "meta": np.array([params.seed], dtype=np.float64),
    }, path)


def load_classifier(path):
    t = load_tensors(path)
    return ClassifierParams(
        proj_w=t["proj.w"], proj_b=t["proj.b"],
        head_w=t["head.w"], head_b=t["head.b"],
        seed=int(t["meta"][0]),
    )
