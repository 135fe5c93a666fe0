"""Energy scoring, threshold detection, and the OOD evaluation suite.

The score of a sample is the temperature-scaled log-sum-exp of its class
logits; higher means more ID-like. A sample is declared OOD when its score
is <= the decision threshold (the boundary counts as OOD).

All metrics are rank statistics with fixed tie and boundary conventions:

  * threshold_at_tpr returns the largest representable threshold admitting
    (strictly above it) at least ceil(tpr * n) ID scores, i.e. the float just
    below the (floor((1-tpr)*n) + 1)-th smallest ID score;
  * AUROC is the Mann-Whitney statistic with ties credited 0.5;
  * AUPR integrates the precision-recall step curve over a descending-score
    sweep with tied scores entering together (no interpolation);
  * CCR@FPRm uses the smallest threshold keeping the OOD-above fraction
    <= m, then counts ID samples that are both admitted and correctly
    classified.

Each convention is locked in by brute-force oracle tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ORIGIN_ID, ORIGIN_OOD
from .errors import NumericError, ValidationError

DECISION_ID = "ID"
DECISION_OOD = "OOD"

CCR_FPRS = (1e-4, 1e-3, 1e-2, 1e-1)

FLOAT_FMT = "%.17g"


def energy_score(logits, temperature):
    """Temperature-scaled log-sum-exp of the class logits (max-shifted)."""
    if not temperature > 0:
        raise ValidationError(f"temperature must be > 0, got {temperature}")
    logits = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(logits).all():
        raise NumericError("non-finite logits")
    m = logits.max()
    return float(m + temperature * np.log(np.exp((logits - m) / temperature).sum()))


def detect(score, delta):
    """OOD iff score <= delta; the boundary itself is OOD."""
    if not np.isfinite(score) or not np.isfinite(delta):
        raise ValidationError("score and delta must be finite")
    return DECISION_OOD if score <= delta else DECISION_ID


def threshold_at_tpr(id_scores, tpr):
    """Largest threshold with at least a ``tpr`` fraction of ID scores above it."""
    scores = np.asarray(id_scores, dtype=np.float64)
    if scores.size == 0:
        raise ValidationError("id_scores must be nonempty")
    if not 0.0 < tpr <= 1.0:
        raise ValidationError(f"tpr must lie in (0, 1], got {tpr}")
    n = scores.size
    need = int(np.ceil(tpr * n))           # scores that must stay above the threshold
    cutoff = np.sort(scores)[n - need]     # the need-th largest score
    return float(np.nextafter(cutoff, -np.inf))


def fpr_at_tpr(id_scores, ood_scores, tpr=0.95):
    """Fraction of OOD scores above the TPR-matched ID threshold."""
    ood = np.asarray(ood_scores, dtype=np.float64)
    if ood.size == 0:
        raise ValidationError("ood_scores must be nonempty")
    thr = threshold_at_tpr(id_scores, tpr)
    return float((ood > thr).mean())


def auroc(id_scores, ood_scores):
    """Probability that a random ID score ranks above a random OOD score."""
    ids = np.asarray(id_scores, dtype=np.float64)
    oods = np.asarray(ood_scores, dtype=np.float64)
    if ids.size == 0 or oods.size == 0:
        raise ValidationError("both score lists must be nonempty")
    combined = np.concatenate([ids, oods])
    order = np.argsort(combined, kind="stable")
    ranks = np.empty(combined.size, dtype=np.float64)
    ranks[order] = np.arange(1, combined.size + 1)
    # average ranks over ties
    sorted_vals = combined[order]
    i = 0
    while i < sorted_vals.size:
        j = i
        while j + 1 < sorted_vals.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        if j > i:
            ranks[order[i:j + 1]] = 0.5 * (i + 1 + j + 1)
        i = j + 1
    rank_sum = ranks[:ids.size].sum()
    u = rank_sum - ids.size * (ids.size + 1) / 2.0
    return float(u / (ids.size * oods.size))


def aupr(id_scores, ood_scores, positive="in"):
    """Area under the precision-recall step curve.

    ``positive="in"`` treats ID as the positive class; ``"out"`` negates the
    scores and treats OOD as positive.
    """
    ids = np.asarray(id_scores, dtype=np.float64)
    oods = np.asarray(ood_scores, dtype=np.float64)
    if ids.size == 0 or oods.size == 0:
        raise ValidationError("both classes must be present")
    if positive == "in":
        scores = np.concatenate([ids, oods])
        is_pos = np.concatenate([np.ones(ids.size, bool), np.zeros(oods.size, bool)])
    elif positive == "out":
        scores = -np.concatenate([ids, oods])
        is_pos = np.concatenate([np.zeros(ids.size, bool), np.ones(oods.size, bool)])
    else:
        raise ValidationError(f"positive must be 'in' or 'out', got {positive!r}")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = is_pos[order].astype(np.float64)
    tp = np.cumsum(sorted_pos)
    fp = np.cumsum(1.0 - sorted_pos)
    # Only threshold positions where the score changes are operating points;
    # tied scores enter the sweep together.
    boundary = np.flatnonzero(np.diff(sorted_scores) != 0)
    idx = np.concatenate([boundary, [scores.size - 1]])
    tp = tp[idx]
    fp = fp[idx]
    n_pos = sorted_pos.sum()
    recall = tp / n_pos
    precision = tp / (tp + fp)
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev_recall) * precision).sum())


def ccr_at_fpr(id_scores, id_correct, ood_scores, max_fpr):
    """Correct-classification rate among ID samples admitted at FPR <= max_fpr."""
    ids = np.asarray(id_scores, dtype=np.float64)
    correct = np.asarray(id_correct, dtype=bool)
    oods = np.asarray(ood_scores, dtype=np.float64)
    if ids.size == 0 or oods.size == 0:
        raise ValidationError("both classes must be present")
    if ids.shape != correct.shape:
        raise ValidationError("id_correct must align with id_scores")
    if not 0.0 < max_fpr <= 1.0:
        raise ValidationError(f"max_fpr must lie in (0, 1], got {max_fpr}")
    allowed = int(np.floor(max_fpr * oods.size))
    if allowed >= oods.size:
        thr = -np.inf
    else:
        thr = np.sort(oods)[::-1][allowed]  # smallest threshold with <= allowed OOD above
    return float(((ids > thr) & correct).mean())


# ---------------------------------------------------------------------------
# per-sample scoring and report assembly

@dataclass(eq=False)
class ScoredSample:
    id: int
    logits: np.ndarray
    score: float
    predicted_class: int
    decision: str
    origin: str | None = None


@dataclass(eq=False)
class MetricsReport:
    fpr95: float
    auroc: float
    aupr_in: float
    aupr_out: float
    ccr_at: dict | None
    id_accuracy: float | None

    def to_json_dict(self):
        ccr = None
        if self.ccr_at is not None:
            ccr = {repr(m): v for m, v in sorted(self.ccr_at.items())}
        return {
            "fpr95": self.fpr95, "auroc": self.auroc,
            "aupr_in": self.aupr_in, "aupr_out": self.aupr_out,
            "ccr_at": ccr, "id_accuracy": self.id_accuracy,
        }


def score_samples(ids, logits, temperature, delta, origins=None):
    """Energy score, argmax class, and threshold decision for each row."""
    logits = np.asarray(logits, dtype=np.float64)
    out = []
    for row, rid in enumerate(ids):
        g = energy_score(logits[row], temperature)
        out.append(ScoredSample(
            id=int(rid),
            logits=logits[row],
            score=g,
            predicted_class=int(np.argmax(logits[row])),
            decision=detect(g, delta),
            origin=None if origins is None else origins[row],
        ))
    return out


def evaluate_samples(samples, truth=None, ccr_fprs=CCR_FPRS):
    """MetricsReport from scored samples with known origins.

    ``truth`` maps sample id to the evaluation ground-truth class; without it
    the classification-aware metrics (ccr_at, id_accuracy) are omitted.
    """
    id_samples = [s for s in samples if s.origin == ORIGIN_ID]
    ood_samples = [s for s in samples if s.origin == ORIGIN_OOD]
    if not id_samples or not ood_samples:
        raise ValidationError("evaluation requires both ID and OOD samples")
    id_scores = np.array([s.score for s in id_samples])
    ood_scores = np.array([s.score for s in ood_samples])

    ccr = None
    id_acc = None
    if truth is not None:
        missing = [s.id for s in id_samples if s.id not in truth]
        if missing:
            raise ValidationError(
                f"truth labels missing for {len(missing)} ID sample(s), e.g. id {missing[0]}"
            )
        correct = np.array([s.predicted_class == truth[s.id] for s in id_samples])
        id_acc = float(correct.mean())
        ccr = {m: ccr_at_fpr(id_scores, correct, ood_scores, m) for m in ccr_fprs}

    return MetricsReport(
        fpr95=fpr_at_tpr(id_scores, ood_scores, 0.95),
        auroc=auroc(id_scores, ood_scores),
        aupr_in=aupr(id_scores, ood_scores, positive="in"),
        aupr_out=aupr(id_scores, ood_scores, positive="out"),
        ccr_at=ccr,
        id_accuracy=id_acc,
    )


def save_scores(samples, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,score,predicted_class,decision\n")
        for s in samples:
            fh.write(f"{s.id},{FLOAT_FMT % s.score},{s.predicted_class},{s.decision}\n")


def load_scores(path):
    """Score CSV rows as (id, score, predicted_class, decision) tuples."""
    from .errors import ParseError

    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "id,score,predicted_class,decision":
        raise ParseError("score header must be 'id,score,predicted_class,decision'", line=1)
    rows = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw:
            continue
        cols = raw.split(",")
        if len(cols) != 4:
            raise ParseError("expected 4 columns", line=lineno)
        if cols[3] not in (DECISION_ID, DECISION_OOD):
            raise ParseError(f"decision must be ID or OOD, got {cols[3]!r}", line=lineno)
        try:
            rows.append((int(cols[0]), float(cols[1]), int(cols[2]), cols[3]))
        except ValueError:
            raise ParseError("malformed score row", line=lineno) from None
    return rows
