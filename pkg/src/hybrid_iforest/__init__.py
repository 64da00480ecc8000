"""Hybrid isolation forest: isolation trees with leaf centroids and labelled anomalies."""

from .forest import (
    ExternalNode,
    HybridForest,
    InternalNode,
    ScoreTriple,
    average_path_length,
    build_forest,
    build_tree,
    default_l_max,
    path_components,
    raw_scores,
)
from .metrics import RocCurve, auc_score, roc_auc, score_histogram
from .scoring import AggregationParams, ScoreNormalizer, aggregate, fit_normalizer, grid_search, normalize

__all__ = [
    "AggregationParams",
    "ExternalNode",
    "HybridForest",
    "InternalNode",
    "RocCurve",
    "ScoreNormalizer",
    "ScoreTriple",
    "aggregate",
    "auc_score",
    "average_path_length",
    "build_forest",
    "build_tree",
    "default_l_max",
    "fit_normalizer",
    "grid_search",
    "normalize",
    "path_components",
    "raw_scores",
    "roc_auc",
    "score_histogram",
]
