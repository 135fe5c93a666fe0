import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphood.data import (
    Dataset,
    EmbeddingRecord,
    SyntheticSpec,
    apply_pseudo_labels,
    datasets_equal,
    dumps_dataset,
    gen_synthetic,
    load_dataset,
    load_origin,
    load_pseudo_labels,
    load_truth,
    normalize_features,
    save_dataset,
    save_origin,
    save_pseudo_labels,
    save_truth,
)
from graphood.errors import ParseError, ValidationError

SMALL_SPEC = SyntheticSpec(
    coarse_id_classes=2, fine_per_class=2, ood_clusters=1,
    points_per_cluster=10, dim=4, cluster_sep=8.0, labeled_fraction=0.5, seed=7,
)


def test_gen_synthetic_counts():
    ds = gen_synthetic(SMALL_SPEC)
    assert len(ds) == 50
    labeled_id = sum(1 for r in ds if r.split == "L" and r.origin == "ID")
    unlabeled_id = sum(1 for r in ds if r.split == "U" and r.origin == "ID")
    ood = sum(1 for r in ds if r.origin == "OOD")
    assert (labeled_id, unlabeled_id, ood) == (20, 20, 10)
    assert all(r.split == "U" for r in ds if r.origin == "OOD")
    assert all(r.label is not None for r in ds if r.split == "L")
    assert all(r.label is None for r in ds if r.split == "U")


def test_gen_synthetic_deterministic_bytes():
    a = dumps_dataset(gen_synthetic(SMALL_SPEC))
    b = dumps_dataset(gen_synthetic(SMALL_SPEC))
    assert a == b


def test_gen_synthetic_seed_sensitivity():
    import dataclasses
    other = dataclasses.replace(SMALL_SPEC, seed=8)
    assert dumps_dataset(gen_synthetic(SMALL_SPEC)) != dumps_dataset(gen_synthetic(other))


@pytest.mark.parametrize("field,value", [
    ("labeled_fraction", 0.0),
    ("labeled_fraction", 1.0),
    ("points_per_cluster", 0),
    ("coarse_id_classes", 0),
    ("cluster_sep", 0.0),
    ("dim", 0),
])
def test_gen_synthetic_validation(field, value):
    import dataclasses
    bad = dataclasses.replace(SMALL_SPEC, **{field: value})
    with pytest.raises(ValidationError) as exc:
        gen_synthetic(bad)
    assert field in str(exc.value)


def test_cluster_separation():
    ds = gen_synthetic(SMALL_SPEC)
    X = ds.feature_matrix()
    # empirical cluster means sit at least ~cluster_sep apart
    means = np.stack([X[c * 10:(c + 1) * 10].mean(0) for c in range(5)])
    dists = np.linalg.norm(means[:, None] - means[None, :], axis=-1)
    np.fill_diagonal(dists, np.inf)
    assert dists.min() > 0.75 * SMALL_SPEC.cluster_sep


def test_two_scale_geometry():
    ds = gen_synthetic(SMALL_SPEC)
    X = ds.feature_matrix()
    means = np.stack([X[c * 10:(c + 1) * 10].mean(0) for c in range(5)])
    sibling = np.linalg.norm(means[0] - means[1])
    cross = min(np.linalg.norm(means[0] - means[2]),
                np.linalg.norm(means[0] - means[3]),
                np.linalg.norm(means[0] - means[4]))
    assert cross > 2 * sibling


def test_origin_never_labeled():
    ds = gen_synthetic(SMALL_SPEC)
    assert not any(r.split == "L" and r.origin == "OOD" for r in ds)


def test_normalize_features_examples():
    recs = [
        EmbeddingRecord(id=0, feature=[3.0, 4.0], split="U"),
        EmbeddingRecord(id=1, feature=[1.0, 0.0], split="U"),
    ]
    out = normalize_features(Dataset(recs))
    assert np.allclose(out.records[0].feature, [0.6, 0.8])
    assert np.allclose(out.records[1].feature, [1.0, 0.0])


def test_normalize_zero_vector_error():
    ds = Dataset([EmbeddingRecord(id=5, feature=[0.0, 0.0], split="U")])
    with pytest.raises(ValidationError) as exc:
        normalize_features(ds)
    assert "5" in str(exc.value)


def test_normalize_unit_norms():
    ds = normalize_features(gen_synthetic(SMALL_SPEC))
    norms = np.linalg.norm(ds.feature_matrix(), axis=1)
    assert np.abs(norms - 1.0).max() <= 1e-9


def test_roundtrip_with_sidecars(tmp_path):
    ds = gen_synthetic(SMALL_SPEC)
    emb = tmp_path / "e.csv"
    org = tmp_path / "o.csv"
    tru = tmp_path / "t.csv"
    save_dataset(ds, emb)
    save_origin(ds, org)
    save_truth(ds, tru)
    back = load_dataset(emb, origin_path=org, truth_path=tru)
    assert datasets_equal(ds, back)


def test_load_dataset_basic(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text(
        "id,split,label,f0,f1\n"
        "0,L,1,0.5,0.25\n"
        "5,U,-,0.1,0.2\n"
        "7,U,-,-1.5,2.5\n"
    )
    ds = load_dataset(path)
    assert len(ds) == 3 and ds.dim == 2
    assert ds.records[1].id == 5
    assert ds.records[1].label is None and ds.records[1].split == "U"
    assert ds.records[0].label == 1


@pytest.mark.parametrize("row,fragment", [
    ("5,L,-,0.1,0.2", "labeled row without a label"),
    ("5,U,3,0.1,0.2", "unlabeled row carries a label"),
    ("5,L,-2,0.1,0.2", "label out of range"),
    ("5,L,1,0.1", "expected 5 columns"),
    ("5,L,1,0.1,abc", "malformed feature"),
])
def test_load_dataset_row_errors(tmp_path, row, fragment):
    path = tmp_path / "bad.csv"
    path.write_text(f"id,split,label,f0,f1\n{row}\n")
    with pytest.raises(ParseError) as exc:
        load_dataset(path)
    assert "line 2" in str(exc.value)
    assert fragment in str(exc.value)


def test_load_dataset_duplicate_id(tmp_path):
    path = tmp_path / "dup.csv"
    path.write_text("id,split,label,f0\n1,U,-,0.5\n1,U,-,0.25\n")
    with pytest.raises(ParseError) as exc:
        load_dataset(path)
    assert "line 3" in str(exc.value) and "duplicate" in str(exc.value)


def test_load_dataset_bad_header(tmp_path):
    path = tmp_path / "h.csv"
    path.write_text("id,label,split,f0\n")
    with pytest.raises(ParseError) as exc:
        load_dataset(path)
    assert "line 1" in str(exc.value)


def test_pseudo_label_roundtrip_and_apply(tmp_path):
    ds = gen_synthetic(SMALL_SPEC)
    rows = [(r.id, 0, 1) for r in ds.records if r.split == "U"][:3]
    path = tmp_path / "p.csv"
    save_pseudo_labels(rows, path)
    assert load_pseudo_labels(path) == sorted(rows, key=lambda r: (r[2], r[0]))
    updated = apply_pseudo_labels(ds, rows)
    for rid, label, _ in rows:
        rec = next(r for r in updated if r.id == rid)
        assert rec.split == "L" and rec.label == label


def test_apply_pseudo_to_labeled_record_fails():
    ds = gen_synthetic(SMALL_SPEC)
    labeled_id = next(r.id for r in ds if r.split == "L")
    with pytest.raises(ValidationError):
        apply_pseudo_labels(ds, [(labeled_id, 0, 1)])


def test_dataset_invariants():
    with pytest.raises(ValidationError):
        Dataset([EmbeddingRecord(id=0, feature=[1.0], split="U"),
                 EmbeddingRecord(id=0, feature=[2.0], split="U")])
    with pytest.raises(ValidationError):
        Dataset([EmbeddingRecord(id=0, feature=[1.0], split="U"),
                 EmbeddingRecord(id=1, feature=[1.0, 2.0], split="U")])
    with pytest.raises(ValidationError):
        EmbeddingRecord(id=0, feature=[1.0], split="L")  # labeled without label
    with pytest.raises(ValidationError):
        EmbeddingRecord(id=0, feature=[1.0], split="U", label=2)


@settings(max_examples=25, deadline=None)
@given(st.lists(
    st.tuples(
        st.lists(st.floats(min_value=-1e6, max_value=1e6,
                           allow_nan=False, allow_infinity=False,
                           width=64), min_size=3, max_size=3),
        st.sampled_from(["L", "U"]),
        st.integers(min_value=0, max_value=4),
    ),
    min_size=1, max_size=12,
))
def test_roundtrip_property(tmp_path_factory, rows):
    records = []
    for i, (feat, split, label) in enumerate(rows):
        records.append(EmbeddingRecord(
            id=i, feature=feat, split=split,
            label=label if split == "L" else None,
        ))
    ds = Dataset(records)
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    save_dataset(ds, path)
    assert datasets_equal(ds, load_dataset(path))


def test_origin_truth_sidecar_parsing(tmp_path):
    org = tmp_path / "o.csv"
    org.write_text("id,origin\n0,ID\n1,OOD\n")
    assert load_origin(org) == {0: "ID", 1: "OOD"}
    bad = tmp_path / "bad.csv"
    bad.write_text("id,origin\n0,id\n")
    with pytest.raises(ParseError):
        load_origin(bad)
    tru = tmp_path / "t.csv"
    tru.write_text("id,label\n3,2\n")
    assert load_truth(tru) == {3: 2}
