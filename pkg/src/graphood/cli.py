"""Command-line interface.

Subcommands expose each pipeline stage so they can be composed through
files, plus ``run`` for the full pipeline. Configuration comes from
defaults, then an optional JSON config file, then flags (flags win). The
default output directory can be set via the GRAPHOOD_OUT_DIR environment
variable.

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import data as D
from . import pipeline as P
from .config import INFONCE_FORMS, PipelineConfig
from .data import SyntheticSpec
from .decode import decode_graph, load_assignment, save_partition
from .errors import GraphOODError, ValidationError
from .knn import build_knn_graph, load_graph, save_graph
from .labeling import assign_labels
from .metrics import threshold_at_tpr
from .objectives import load_classifier
from .scorer import forward, init_scorer, load_scorer, save_scorer, train_scorer

ENV_OUT_DIR = "GRAPHOOD_OUT_DIR"

EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_VALIDATION, f"error[args]: {message}\n")


_CONFIG_FLAGS = [
    ("--k", int, "neighbors per node in the affinity graph"),
    ("--k-target", int, "stop the hierarchy before dropping below this many subgraphs (0 disables)"),
    ("--p-tau", float, "linkage threshold for candidate edges"),
    ("--rho", float, "labeled-percentage threshold for pseudo-labeling"),
    ("--temperature", float, "energy score temperature"),
    ("--delta", float, "decision threshold (score <= delta is OOD)"),
    ("--alpha", float, "contrastive loss weight"),
    ("--beta", float, "equalization loss weight"),
    ("--gamma", float, "original-labeled-set loss weight"),
    ("--max-levels", int, "hierarchy level cap"),
    ("--max-epochs", int, "training epoch cap"),
    ("--lr", float, "classifier learning rate"),
    ("--scorer-lr", float, "scorer learning rate"),
    ("--scorer-steps", int, "scorer gradient steps per epoch"),
    ("--hidden-dim", int, "hidden width of scorer and classifier"),
    ("--noise-sigma", float, "augmentation noise standard deviation"),
    ("--drop-prob", float, "augmentation coordinate drop probability"),
    ("--seed", int, "pipeline seed"),
]

_SYNTH_FLAGS = [
    ("--coarse-id-classes", int),
    ("--fine-per-class", int),
    ("--ood-clusters", int),
    ("--points-per-cluster", int),
    ("--dim", int),
    ("--cluster-sep", float),
    ("--labeled-fraction", float),
]


def _add_config_flags(parser):
    for flag, typ, help_text in _CONFIG_FLAGS:
        parser.add_argument(flag, type=typ, default=None, help=help_text)
    parser.add_argument("--infonce-form", choices=INFONCE_FORMS, default=None,
                        help="contrastive loss form")
    parser.add_argument("--config", default=None,
                        help="JSON file with config fields (flags win)")


def _add_synth_flags(parser):
    for flag, typ in _SYNTH_FLAGS:
        parser.add_argument(flag, type=typ, default=None)


def _add_out_dir(parser):
    parser.add_argument("--out-dir", default=None,
                        help=f"output directory (default: ${ENV_OUT_DIR} or '.')")


def build_config(args):
    values = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            file_values = json.load(fh)
        unknown = set(file_values) - set(PipelineConfig.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown config file field(s): {sorted(unknown)}")
        values.update(file_values)
    for flag, _, _ in _CONFIG_FLAGS:
        name = flag.lstrip("-").replace("-", "_")
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if getattr(args, "infonce_form", None) is not None:
        values["infonce_form"] = args.infonce_form
    if values.get("k_target") == 0:
        values["k_target"] = None
    cfg = PipelineConfig(**values)
    cfg = replace(cfg, synthetic=build_synth_spec(args, cfg))
    cfg.validate()
    return cfg


def build_synth_spec(args, cfg):
    values = {"seed": cfg.seed}
    for flag, _ in _SYNTH_FLAGS:
        name = flag.lstrip("-").replace("-", "_")
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    spec = SyntheticSpec(**values)
    spec.validate()
    return spec


def resolve_out_dir(args):
    out = args.out_dir or os.environ.get(ENV_OUT_DIR) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _load_embeddings(args):
    return D.load_dataset(args.embeddings)


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_synth(args):
    cfg = build_config(args)
    out = resolve_out_dir(args)
    dataset = P.generate_dataset(cfg, out_dir=out)
    print(f"wrote {len(dataset)} records to {out}", file=sys.stderr)
    return 0


def cmd_build_graph(args):
    cfg = build_config(args)
    dataset = D.normalize_features(_load_embeddings(args))
    graph = build_knn_graph(dataset.feature_matrix(), cfg.k)
    save_graph(graph, args.out)
    print(f"wrote {graph.n * graph.k} edges to {args.out}", file=sys.stderr)
    return 0


def cmd_train_scorer(args):
    cfg = build_config(args)
    dataset = D.normalize_features(_load_embeddings(args))
    graph = build_knn_graph(dataset.feature_matrix(), cfg.k)
    params = init_scorer(dataset.dim, cfg.hidden_dim, cfg.seed)
    params, trace = train_scorer(params, graph, dataset.feature_matrix(),
                                 dataset.label_array(), cfg.scorer_lr, args.steps)
    save_scorer(params, args.out)
    print(f"loss {trace[0]:.6f} -> {trace[-1]:.6f} over {len(trace)} steps",
          file=sys.stderr)
    return 0


def cmd_cut(args):
    cfg = build_config(args)
    dataset = D.normalize_features(_load_embeddings(args))
    graph = load_graph(args.graph)
    if graph.n != len(dataset):
        raise ValidationError("graph and embeddings disagree on node count")
    params = load_scorer(args.scorer)
    ld = forward(params, graph, dataset.feature_matrix())
    part = decode_graph(graph, ld, cfg.p_tau)
    save_partition(part, dataset.ids(), args.out)
    print(f"{part.n_subgraphs} subgraphs from {graph.n} nodes", file=sys.stderr)
    return 0


def cmd_assign_labels(args):
    cfg = build_config(args)
    dataset = _load_embeddings(args)
    assignment = load_assignment(args.partition, dataset.ids())
    updated, report = assign_labels(assignment, dataset, cfg.rho, args.epoch)
    D.save_pseudo_labels(report.newly_labeled, args.out)
    print(f"assigned {len(report.newly_labeled)} pseudo-labels", file=sys.stderr)
    return 0


def cmd_train(args):
    cfg = build_config(args)
    out = resolve_out_dir(args)
    dataset = _load_embeddings(args)
    result = P.train_stage(cfg, dataset, out_dir=out)
    print(f"trained for {len(result.epochs)} epochs, "
          f"{len(result.pseudo_rows)} pseudo-labels", file=sys.stderr)
    return 0


def cmd_score(args):
    cfg = build_config(args)
    out = resolve_out_dir(args)
    dataset = _load_embeddings(args)
    if args.origin:
        dataset = D.apply_origin(dataset, D.load_origin(args.origin))
    params = load_classifier(args.classifier)
    if args.delta_from_tpr:
        if not args.origin:
            raise ValidationError("--delta-from-tpr requires --origin")
        samples = P.score_stage(cfg, dataset, params, out_dir=None)
        id_scores = [s.score for s in samples if s.origin == "ID"]
        cfg = replace(cfg, delta=threshold_at_tpr(id_scores, 0.95))
        print(f"delta from 95% TPR: {cfg.delta!r}", file=sys.stderr)
    samples = P.score_stage(cfg, dataset, params, out_dir=out)
    print(f"scored {len(samples)} records", file=sys.stderr)
    return 0


def cmd_evaluate(args):
    report = P.evaluate_from_files(args.scores, args.origin,
                                   truth_path=args.truth, out_path=args.out)
    sys.stdout.write(P.dumps_json(report.to_json_dict()))
    return 0


def cmd_run(args):
    cfg = build_config(args)
    out = resolve_out_dir(args)
    if args.gen_synth is None and not args.embeddings:
        raise ValidationError("run needs --gen-synth or --embeddings")
    report = P.run_pipeline(
        cfg, out,
        embeddings_path=args.embeddings or None,
        origin_path=args.origin or None,
        truth_path=args.truth or None,
    )
    sys.stdout.write(P.dumps_json(report.to_json_dict()))
    return 0


def make_parser():
    parser = _Parser(prog="graphood",
                     description="hierarchical graph-cut OOD detection on embeddings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic benchmark")
    _add_config_flags(p)
    _add_synth_flags(p)
    _add_out_dir(p)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("build-graph", help="build the k-NN affinity graph")
    _add_config_flags(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", default="graph.csv")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train-scorer", help="train the linkage/density scorer")
    _add_config_flags(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--out", default="scorer.bin")
    p.set_defaults(func=cmd_train_scorer)

    p = sub.add_parser("cut", help="decode a graph into subgraphs")
    _add_config_flags(p)
    p.add_argument("--graph", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--scorer", required=True)
    p.add_argument("--out", default="partition.csv")
    p.set_defaults(func=cmd_cut)

    p = sub.add_parser("assign-labels", help="pseudo-label subgraph members")
    _add_config_flags(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--epoch", type=int, default=1)
    p.add_argument("--out", default="pseudo_labels.csv")
    p.set_defaults(func=cmd_assign_labels)

    p = sub.add_parser("train", help="run the full training loop")
    _add_config_flags(p)
    p.add_argument("--embeddings", required=True)
    _add_out_dir(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score records with a trained classifier")
    _add_config_flags(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--origin", default=None)
    p.add_argument("--delta-from-tpr", action="store_true",
                   help="derive delta from the 95%% TPR threshold (needs --origin)")
    _add_out_dir(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="compute metrics from score/origin files")
    p.add_argument("--scores", required=True)
    p.add_argument("--origin", required=True)
    p.add_argument("--truth", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="full pipeline: data -> train -> score -> evaluate")
    _add_config_flags(p)
    _add_synth_flags(p)
    p.add_argument("--gen-synth", nargs="?", const="default", default=None,
                   choices=["default"], help="use the synthetic benchmark")
    p.add_argument("--embeddings", default=None)
    p.add_argument("--origin", default=None)
    p.add_argument("--truth", default=None)
    _add_out_dir(p)
    p.set_defaults(func=cmd_run)

    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    stage = args.command
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error[{stage}]: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (GraphOODError, OSError) as exc:
        print(f"error[{stage}]: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
