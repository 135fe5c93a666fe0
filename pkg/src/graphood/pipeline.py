"""End-to-end orchestration and the staged entry points behind the CLI.

A full run is: load or generate embeddings -> normalize -> train (the
per-epoch loop of graph cut, pseudo-labeling, and gradient updates) ->
score every record -> evaluate against the evaluation-only origins.
Artifacts are written with fixed formatting so identical configurations
produce byte-identical outputs.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import data as D
from .config import PipelineConfig
from .errors import ValidationError
from .metrics import evaluate_samples, score_samples
from .objectives import classifier_forward, run_training, save_classifier
from .scorer import save_scorer

EPOCHS_FILE = "epochs.jsonl"
PSEUDO_FILE = "pseudo_labels.csv"
SCORES_FILE = "scores.csv"
METRICS_FILE = "metrics.json"
TRACE_FILE = "hierarchy_trace.json"
EMBEDDINGS_FILE = "embeddings.csv"
ORIGIN_FILE = "origin.csv"
TRUTH_FILE = "truth.csv"
CLASSIFIER_FILE = "classifier.bin"

ARTIFACT_FILES = (EPOCHS_FILE, PSEUDO_FILE, SCORES_FILE, METRICS_FILE, TRACE_FILE)


def dumps_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_json(obj, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_json(obj))


def generate_dataset(cfg, out_dir=None):
    """Synthetic dataset from cfg.synthetic, optionally written to disk."""
    dataset = D.gen_synthetic(cfg.synthetic)
    if out_dir is not None:
        D.save_dataset(dataset, os.path.join(out_dir, EMBEDDINGS_FILE))
        D.save_origin(dataset, os.path.join(out_dir, ORIGIN_FILE))
        D.save_truth(dataset, os.path.join(out_dir, TRUTH_FILE))
    return dataset


def train_stage(cfg, dataset, out_dir=None):
    """Normalize, run the training loop, and write the training artifacts."""
    normalized = D.normalize_features(dataset)
    result = run_training(normalized, cfg)
    if out_dir is not None:
        with open(os.path.join(out_dir, EPOCHS_FILE), "w", encoding="utf-8",
                  newline="\n") as fh:
            for report in result.epochs:
                fh.write(json.dumps(report.to_json_dict(), sort_keys=True) + "\n")
        D.save_pseudo_labels(result.pseudo_rows, os.path.join(out_dir, PSEUDO_FILE))
        write_json(result.hierarchy_traces, os.path.join(out_dir, TRACE_FILE))
        save_classifier(result.params, os.path.join(out_dir, CLASSIFIER_FILE))
        for dim, params in sorted(result.scorers.items()):
            save_scorer(params, os.path.join(out_dir, f"scorer_dim{dim}.bin"))
    return result


def score_stage(cfg, dataset, params, out_dir=None):
    """Energy scores for every record of the (raw) dataset."""
    normalized = D.normalize_features(dataset)
    _, logits, _ = classifier_forward(params, normalized.feature_matrix())
    samples = score_samples(
        normalized.ids(), logits, cfg.temperature, cfg.delta,
        origins=[rec.origin for rec in normalized],
    )
    if out_dir is not None:
        from .metrics import save_scores
        save_scores(samples, os.path.join(out_dir, SCORES_FILE))
    return samples


def evaluate_stage(samples, truth=None, out_path=None):
    report = evaluate_samples(samples, truth=truth)
    if out_path is not None:
        write_json(report.to_json_dict(), out_path)
    return report


def evaluate_from_files(scores_path, origin_path, truth_path=None, out_path=None):
    """Rebuild scored samples from the score CSV plus sidecars and evaluate."""
    from .metrics import ScoredSample, load_scores

    origin = D.load_origin(origin_path)
    truth = D.load_truth(truth_path) if truth_path else None
    samples = []
    for rid, score, pred, decision in load_scores(scores_path):
        if rid not in origin:
            raise ValidationError(f"origin file is missing id {rid}")
        samples.append(ScoredSample(
            id=rid, logits=np.array([]), score=score,
            predicted_class=pred, decision=decision, origin=origin[rid],
        ))
    report = evaluate_samples(samples, truth=truth)
    if out_path is not None:
        write_json(report.to_json_dict(), out_path)
    return report


def run_pipeline(cfg, out_dir, embeddings_path=None, origin_path=None,
                 truth_path=None):
    """Full pipeline; returns the MetricsReport and writes all artifacts."""
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    if embeddings_path is None:
        dataset = generate_dataset(cfg, out_dir=out_dir)
    else:
        dataset = D.load_dataset(embeddings_path, origin_path=origin_path,
                                 truth_path=truth_path)
    if not any(rec.origin is not None for rec in dataset):
        raise ValidationError(
            "evaluation requires origins; pass an origin sidecar or use synthetic data"
        )
    result = train_stage(cfg, dataset, out_dir=out_dir)
    # Score the post-training dataset records (features unchanged by labeling).
    samples = score_stage(cfg, dataset, result.params, out_dir=out_dir)
    truth = {rec.id: rec.true_label for rec in dataset if rec.true_label is not None}
    report = evaluate_stage(samples, truth=truth or None,
                            out_path=os.path.join(out_dir, METRICS_FILE))
    return report
