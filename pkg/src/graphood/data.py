"""Dataset model, synthetic benchmark generation, and CSV interchange.

A dataset is an ordered collection of embedding records. Each record has a
split flag (labeled/unlabeled), an optional class label, and two
evaluation-only fields that training code never reads: ``origin`` (ID vs OOD)
and ``true_label`` (the generating class of ID records).

File formats:
  * embeddings:    ``id,split,label,f0,...,f{d-1}``, split in {L,U}, label a
                   decimal class index or ``-``, floats at full precision
  * origin:        ``id,origin``, origin in {ID,OOD}
  * truth labels:  ``id,label`` (evaluation ground truth for ID records)
  * pseudo labels: ``id,pseudo_label,epoch_assigned``
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ParseError, ValidationError
from .seeding import STREAM_DATA, substream

LABELED = "L"
UNLABELED = "U"
ORIGIN_ID = "ID"
ORIGIN_OOD = "OOD"

# %.17g round-trips binary64 exactly; the format requires >= 9 significant digits.
FLOAT_FMT = "%.17g"

NO_LABEL = -1


@dataclass(eq=False)
class EmbeddingRecord:
    """One embedding vector with split, label, and evaluation-only fields."""

    id: int
    feature: np.ndarray
    split: str
    label: int | None = None
    origin: str | None = None
    true_label: int | None = None

    def __post_init__(self):
        if self.id < 0:
            raise ValidationError(f"record id must be non-negative, got {self.id}")
        if self.split not in (LABELED, UNLABELED):
            raise ValidationError(f"split must be '{LABELED}' or '{UNLABELED}', got {self.split!r}")
        if self.split == LABELED and self.label is None:
            raise ValidationError(f"labeled record {self.id} carries no label")
        if self.split == UNLABELED and self.label is not None:
            raise ValidationError(f"unlabeled record {self.id} carries a label")
        if self.label is not None and self.label < 0:
            raise ValidationError(f"record {self.id}: label out of range: {self.label}")
        if self.origin not in (None, ORIGIN_ID, ORIGIN_OOD):
            raise ValidationError(f"record {self.id}: origin must be ID or OOD, got {self.origin!r}")
        self.feature = np.asarray(self.feature, dtype=np.float64)
        if self.feature.ndim != 1 or self.feature.size < 1:
            raise ValidationError(f"record {self.id}: feature must be a non-empty vector")
        if not np.isfinite(self.feature).all():
            raise ValidationError(f"record {self.id}: feature contains non-finite values")


class Dataset:
    """Immutable ordered collection of records with a common dimension."""

    def __init__(self, records):
        records = tuple(records)
        if not records:
            raise ValidationError("dataset must contain at least one record")
        dim = records[0].feature.size
        seen = set()
        for rec in records:
            if rec.feature.size != dim:
                raise ValidationError(
                    f"record {rec.id}: dimension {rec.feature.size} != dataset dimension {dim}"
                )
            if rec.id in seen:
                raise ValidationError(f"duplicate record id {rec.id}")
            seen.add(rec.id)
        self.records = records
        self.dim = dim

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def feature_matrix(self):
        return np.stack([rec.feature for rec in self.records])

    def ids(self):
        return np.array([rec.id for rec in self.records], dtype=np.int64)

    def label_array(self):
        """Per-record label with NO_LABEL for unlabeled records."""
        return np.array(
            [rec.label if rec.label is not None else NO_LABEL for rec in self.records],
            dtype=np.int64,
        )

    def labeled_mask(self):
        return np.array([rec.split == LABELED for rec in self.records], dtype=bool)

    def n_classes(self):
        labels = [rec.label for rec in self.records if rec.label is not None]
        truth = [rec.true_label for rec in self.records if rec.true_label is not None]
        if not labels and not truth:
            return 0
        return int(max(labels + truth)) + 1


def records_equal(a, b):
    return (
        a.id == b.id
        and a.split == b.split
        and a.label == b.label
        and a.origin == b.origin
        and a.true_label == b.true_label
        and np.array_equal(a.feature, b.feature)
    )


def datasets_equal(a, b):
    return len(a) == len(b) and all(records_equal(x, y) for x, y in zip(a, b))


COARSE_SEP_FACTOR = 4.0


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the multi-granularity synthetic benchmark.

    Coarse ID classes are geometrically split into fine subclusters that all
    share the coarse label; OOD clusters are unlabeled and never overlap the
    ID label space. ``cluster_sep`` is the minimum distance between any two
    cluster centers, in units of the within-cluster standard deviation (1.0).
    Geometry is two-scale: sibling subclusters of one coarse class sit
    ``cluster_sep`` apart while distinct coarse classes and OOD clusters sit
    ``COARSE_SEP_FACTOR`` times farther, so granularity is a property of the
    data and not only of the labels.
    """

    coarse_id_classes: int = 2
    fine_per_class: int = 2
    ood_clusters: int = 1
    points_per_cluster: int = 100
    dim: int = 16
    cluster_sep: float = 8.0
    labeled_fraction: float = 0.6
    seed: int = 0

    def validate(self):
        for name in ("coarse_id_classes", "fine_per_class", "ood_clusters",
                     "points_per_cluster", "dim"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValidationError(f"{name} must be an integer >= 1, got {value}")
        if not 0.0 < self.labeled_fraction < 1.0:
            raise ValidationError(
                f"labeled_fraction must be strictly between 0 and 1, got {self.labeled_fraction}"
            )
        if not self.cluster_sep > 0:
            raise ValidationError(f"cluster_sep must be > 0, got {self.cluster_sep}")


def _min_pairwise_distance(points):
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    return dist[np.triu_indices(len(points), k=1)].min()


def _rescale_to_min_distance(points, target):
    """Scale a point cloud about the origin so its closest pair is ``target`` apart."""
    if len(points) < 2:
        return points
    min_dist = _min_pairwise_distance(points)
    if min_dist <= 0:
        raise ValidationError("degenerate center draw; use a different seed")
    return points * (target / min_dist)


def gen_synthetic(spec):
    """Generate a deterministic Gaussian-mixture dataset from ``spec``.

    Coarse centers (one per ID class plus one per OOD cluster) are drawn from
    the seeded generator and rescaled so their closest pair is
    ``COARSE_SEP_FACTOR * cluster_sep`` apart; fine subcluster centers are
    offsets around their coarse center rescaled to ``cluster_sep``. A final
    global rescale guarantees every pair of cluster centers is at least
    ``cluster_sep`` apart. Every cluster is an isotropic unit-variance
    Gaussian around its center, and exactly the requested fraction of ID
    points (rounded) lands in the labeled split, spread as evenly as
    possible over the ID clusters.
    """
    spec.validate()
    rng = substream(spec.seed, STREAM_DATA)

    n_id_clusters = spec.coarse_id_classes * spec.fine_per_class
    n_clusters = n_id_clusters + spec.ood_clusters
    npc = spec.points_per_cluster

    n_coarse = spec.coarse_id_classes + spec.ood_clusters
    coarse_centers = _rescale_to_min_distance(
        rng.standard_normal((n_coarse, spec.dim)),
        COARSE_SEP_FACTOR * spec.cluster_sep,
    )
    centers = np.empty((n_clusters, spec.dim))
    for coarse in range(spec.coarse_id_classes):
        offsets = rng.standard_normal((spec.fine_per_class, spec.dim))
        offsets -= offsets.mean(axis=0)
        offsets = _rescale_to_min_distance(offsets, spec.cluster_sep)
        if spec.fine_per_class == 1:
            offsets = np.zeros((1, spec.dim))
        lo = coarse * spec.fine_per_class
        centers[lo:lo + spec.fine_per_class] = coarse_centers[coarse] + offsets
    centers[n_id_clusters:] = coarse_centers[spec.coarse_id_classes:]
    if n_clusters > 1:
        # Offsets can shrink a cross-class gap below the requested minimum.
        min_dist = _min_pairwise_distance(centers)
        if min_dist < spec.cluster_sep:
            centers = centers * (spec.cluster_sep / min_dist)

    points = [centers[c] + rng.standard_normal((npc, spec.dim)) for c in range(n_clusters)]

    n_id_points = n_id_clusters * npc
    target_labeled = int(round(spec.labeled_fraction * n_id_points))
    base, rem = divmod(target_labeled, n_id_clusters)
    labeled_masks = []
    for c in range(n_id_clusters):
        count = base + (1 if c < rem else 0)
        mask = np.zeros(npc, dtype=bool)
        mask[rng.permutation(npc)[:count]] = True
        labeled_masks.append(mask)

    records = []
    next_id = 0
    for coarse in range(spec.coarse_id_classes):
        for fine in range(spec.fine_per_class):
            c = coarse * spec.fine_per_class + fine
            for i in range(npc):
                labeled = labeled_masks[c][i]
                records.append(EmbeddingRecord(
                    id=next_id,
                    feature=points[c][i],
                    split=LABELED if labeled else UNLABELED,
                    label=coarse if labeled else None,
                    origin=ORIGIN_ID,
                    true_label=coarse,
                ))
                next_id += 1
    for c in range(n_id_clusters, n_clusters):
        for i in range(npc):
            records.append(EmbeddingRecord(
                id=next_id,
                feature=points[c][i],
                split=UNLABELED,
                origin=ORIGIN_OOD,
            ))
            next_id += 1
    return Dataset(records)


def normalize_features(dataset):
    """Rescale every feature to unit L2 norm (direction preserved)."""
    out = []
    for rec in dataset:
        norm = float(np.linalg.norm(rec.feature))
        if norm == 0.0:
            raise ValidationError(f"record {rec.id}: cannot normalize a zero vector")
        out.append(replace(rec, feature=rec.feature / norm))
    return Dataset(out)


# ---------------------------------------------------------------------------
# serialization

def dumps_dataset(dataset):
    lines = ["id,split,label," + ",".join(f"f{i}" for i in range(dataset.dim))]
    for rec in dataset:
        label = "-" if rec.label is None else str(rec.label)
        feats = ",".join(FLOAT_FMT % x for x in rec.feature)
        lines.append(f"{rec.id},{rec.split},{label},{feats}")
    return "\n".join(lines) + "\n"


def save_dataset(dataset, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_dataset(dataset))


def _parse_int(text, what, line):
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"{what} is not an integer: {text!r}", line=line) from None


def load_dataset(path, origin_path=None, truth_path=None, pseudo_path=None):
    """Parse an embedding CSV; optional sidecars restore evaluation fields.

    ``pseudo_path`` applies previously assigned pseudo-labels: each listed
    record must be unlabeled and is moved to the labeled split.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    header = lines[0].split(",")
    if header[:3] != ["id", "split", "label"] or len(header) < 4:
        raise ParseError(f"malformed header: {lines[0]!r}", line=1)
    dim = len(header) - 3
    expected = [f"f{i}" for i in range(dim)]
    if header[3:] != expected:
        raise ParseError(f"feature columns must be f0..f{dim - 1}", line=1)

    records = []
    seen = set()
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw:
            continue
        cols = raw.split(",")
        if len(cols) != 3 + dim:
            raise ParseError(f"expected {3 + dim} columns, got {len(cols)}", line=lineno)
        rid = _parse_int(cols[0], "id", lineno)
        if rid < 0:
            raise ParseError(f"id out of range: {rid}", line=lineno)
        if rid in seen:
            raise ParseError(f"duplicate id {rid}", line=lineno)
        seen.add(rid)
        split = cols[1]
        if split not in (LABELED, UNLABELED):
            raise ParseError(f"split must be L or U, got {split!r}", line=lineno)
        if cols[2] == "-":
            label = None
        else:
            label = _parse_int(cols[2], "label", lineno)
            if label < 0:
                raise ParseError(f"label out of range: {label}", line=lineno)
        if split == LABELED and label is None:
            raise ParseError("labeled row without a label", line=lineno)
        if split == UNLABELED and label is not None:
            raise ParseError("unlabeled row carries a label", line=lineno)
        try:
            feature = np.array([float(x) for x in cols[3:]], dtype=np.float64)
        except ValueError:
            raise ParseError("malformed feature value", line=lineno) from None
        if not np.isfinite(feature).all():
            raise ParseError("non-finite feature value", line=lineno)
        records.append(EmbeddingRecord(id=rid, feature=feature, split=split, label=label))
    dataset = Dataset(records)

    if origin_path is not None:
        dataset = apply_origin(dataset, load_origin(origin_path))
    if truth_path is not None:
        dataset = apply_truth(dataset, load_truth(truth_path))
    if pseudo_path is not None:
        dataset = apply_pseudo_labels(dataset, load_pseudo_labels(path=pseudo_path))
    return dataset


def save_origin(dataset, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,origin\n")
        for rec in dataset:
            if rec.origin is not None:
                fh.write(f"{rec.id},{rec.origin}\n")


def load_origin(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "id,origin":
        raise ParseError("origin file header must be 'id,origin'", line=1)
    out = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw:
            continue
        cols = raw.split(",")
        if len(cols) != 2:
            raise ParseError("expected 2 columns", line=lineno)
        rid = _parse_int(cols[0], "id", lineno)
        if cols[1] not in (ORIGIN_ID, ORIGIN_OOD):
            raise ParseError(f"origin must be ID or OOD, got {cols[1]!r}", line=lineno)
        if rid in out:
            raise ParseError(f"duplicate id {rid}", line=lineno)
        out[rid] = cols[1]
    return out


def apply_origin(dataset, origin_map):
    return Dataset(
        replace(rec, origin=origin_map.get(rec.id, rec.origin)) for rec in dataset
    )


def save_truth(dataset, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,label\n")
        for rec in dataset:
            if rec.true_label is not None:
                fh.write(f"{rec.id},{rec.true_label}\n")


def load_truth(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "id,label":
        raise ParseError("truth file header must be 'id,label'", line=1)
    out = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw:
            continue
        cols = raw.split(",")
        if len(cols) != 2:
            raise ParseError("expected 2 columns", line=lineno)
        rid = _parse_int(cols[0], "id", lineno)
        label = _parse_int(cols[1], "label", lineno)
        if label < 0:
            raise ParseError(f"label out of range: {label}", line=lineno)
        if rid in out:
            raise ParseError(f"duplicate id {rid}", line=lineno)
        out[rid] = label
    return out


def apply_truth(dataset, truth_map):
    return Dataset(
        replace(rec, true_label=truth_map.get(rec.id, rec.true_label)) for rec in dataset
    )


def save_pseudo_labels(rows, path):
    """Write (id, pseudo_label, epoch_assigned) rows sorted by epoch then id."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,pseudo_label,epoch_assigned\n")
        for rid, label, epoch in sorted(rows, key=lambda r: (r[2], r[0])):
            fh.write(f"{rid},{label},{epoch}\n")


def load_pseudo_labels(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "id,pseudo_label,epoch_assigned":
        raise ParseError("pseudo-label header must be 'id,pseudo_label,epoch_assigned'", line=1)
    rows = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw:
            continue
        cols = raw.split(",")
        if len(cols) != 3:
            raise ParseError("expected 3 columns", line=lineno)
        rows.append(tuple(_parse_int(c, name, lineno)
                          for c, name in zip(cols, ("id", "pseudo_label", "epoch_assigned"))))
    return rows


def apply_pseudo_labels(dataset, rows):
    by_id = {rec.id: rec for rec in dataset}
    for rid, label, _epoch in rows:
        rec = by_id.get(rid)
        if rec is None:
            raise ValidationError(f"pseudo-label for unknown record id {rid}")
        if rec.split != UNLABELED:
            raise ValidationError(f"pseudo-label for already-labeled record id {rid}")
        by_id[rid] = replace(rec, split=LABELED, label=label)
    return Dataset(by_id[rec.id] for rec in dataset)
