"""Multi-granularity OOD detection via hierarchical graph cuts on embeddings."""

from .config import LossWeights, PipelineConfig
from .data import (
    Dataset,
    EmbeddingRecord,
    SyntheticSpec,
    gen_synthetic,
    load_dataset,
    normalize_features,
    save_dataset,
)
from .decode import SubgraphPartition, candidate_set, decode_graph
from .errors import GraphOODError, NumericError, ParseError, ValidationError
from .hierarchy import HierarchyConfig, HierarchyResult, aggregate, run_hierarchy
from .knn import AffinityGraph, build_knn_graph, cosine_similarity
from .labeling import assign_labels, labeled_percentage
from .metrics import (
    MetricsReport,
    ScoredSample,
    auroc,
    aupr,
    ccr_at_fpr,
    detect,
    energy_score,
    evaluate_samples,
    fpr_at_tpr,
    threshold_at_tpr,
)
from .objectives import (
    ClassifierParams,
    augment_pair,
    classification_loss,
    equalization_loss,
    infonce_loss,
    init_classifier,
    run_training,
    total_loss,
)
from .pipeline import run_pipeline
from .scorer import (
    LinkageDensity,
    ScorerParams,
    forward,
    ground_truth_density,
    init_scorer,
    scorer_loss,
    train_scorer,
)

__version__ = "0.1.0"
