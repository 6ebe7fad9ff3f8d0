"""Curriculum-gated pseudo-label decision layer for multi-domain detection.

The package sits between a pluggable detector and a self-training loop:
it scores how similar each unlabeled domain looks to the labeled one,
schedules domains (or single images) easiest-first, estimates each
domain's class distribution from box-count ratios, and filters detector
predictions through per-class, per-domain thresholds that adapt to keep
the accepted pseudo-label mix unbiased.  A built-in synthetic world with
a parametric detector provides ground-truth oracles for end-to-end
verification.
"""

from .curriculum import (
    CurriculumSchedule,
    DomainStats,
    active_set,
    build_schedule,
    build_schedule_imagewise,
    domain_similarity,
    image_score,
)
from .distributions import ClassDistribution, kl_divergence
from .ema import EmaState, ema_update
from .errors import ParseError, ValidationError
from .records import (
    ClassCatalog,
    DomainCatalog,
    GroundTruthRecord,
    PredictionRecord,
    ScoredBox,
    ingest_predictions,
    labeled_class_distribution,
    load_catalogs,
    load_ground_truth,
    write_ground_truth,
    write_predictions,
)
from .selection import PseudoLabel, RoundReport, run_round, select_pseudo_labels
from .synth import (
    DetectorSkill,
    DomainSpec,
    SyntheticWorld,
    WorldConfig,
    evaluate_estimation,
    generate_world,
    measure_precision,
    oracle_class_distribution,
    simulate_detector,
)
from .thresholds import (
    PseudoLabelAccumulator,
    ThresholdTable,
    compute_thresholds,
    estimate_class_distribution,
    pooled_class_ratios,
)

__version__ = "0.1.0"

__all__ = [
    "ClassCatalog",
    "ClassDistribution",
    "CurriculumSchedule",
    "DetectorSkill",
    "DomainCatalog",
    "DomainSpec",
    "DomainStats",
    "EmaState",
    "GroundTruthRecord",
    "ParseError",
    "PredictionRecord",
    "PseudoLabel",
    "PseudoLabelAccumulator",
    "RoundReport",
    "ScoredBox",
    "SyntheticWorld",
    "ThresholdTable",
    "ValidationError",
    "WorldConfig",
    "active_set",
    "build_schedule",
    "build_schedule_imagewise",
    "compute_thresholds",
    "domain_similarity",
    "ema_update",
    "estimate_class_distribution",
    "evaluate_estimation",
    "generate_world",
    "image_score",
    "ingest_predictions",
    "kl_divergence",
    "labeled_class_distribution",
    "load_catalogs",
    "load_ground_truth",
    "measure_precision",
    "oracle_class_distribution",
    "pooled_class_ratios",
    "run_round",
    "select_pseudo_labels",
    "simulate_detector",
    "write_ground_truth",
    "write_predictions",
]
