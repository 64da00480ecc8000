"""Normalization and linear aggregation of the three raw score components."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forest import HybridForest, ScoreTriple
from .metrics import MetricsError, auc_score

COMPONENTS = ("path_score", "centroid_score", "anomaly_ratio_score")


@dataclass
class ScoreNormalizer:
    """Component-wise min/max of (path, centroid, anomaly-ratio) scores on train."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        self.mins = np.asarray(self.mins, dtype=float).reshape(3)
        self.maxs = np.asarray(self.maxs, dtype=float).reshape(3)
        if np.any(self.mins > self.maxs):
            raise ValueError("normalizer min exceeds max")

    def transform(self, raw) -> np.ndarray:
        """Min-max map raw components (``(n, 3)`` array or ScoreTriple).

        Values are not clamped: test instances outside the training range
        map outside [0, 1]. Constant components map to 0.
        """
        if isinstance(raw, ScoreTriple):
            raw = raw.as_array()
        raw = np.asarray(raw, dtype=float)
        span = self.maxs - self.mins
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (raw - self.mins) / safe, 0.0)


def fit_normalizer(forest: HybridForest, train) -> ScoreNormalizer:
    raw = forest.raw_scores(train).as_array()
    if raw.shape[0] == 0:
        raise ValueError("cannot fit a normalizer on an empty training set")
    return ScoreNormalizer(raw.min(axis=0), raw.max(axis=0))


def normalize(normalizer: ScoreNormalizer, triple) -> np.ndarray:
    return normalizer.transform(triple)


@dataclass(frozen=True)
class AggregationParams:
    alpha1: float = 1.0
    alpha2: float = 1.0

    def __post_init__(self):
        for name in ("alpha1", "alpha2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def aggregate(normalized, params: AggregationParams) -> np.ndarray | float:
    """Blend normalized (path, centroid, anomaly-ratio) scores.

    ``alpha2 * (alpha1 * s + (1 - alpha1) * s_c) + (1 - alpha2) * s_a``.
    ``alpha2 = 1`` drops the supervised term; ``alpha1 = alpha2 = 1`` is the
    plain isolation forest score.
    """
    z = np.asarray(normalized, dtype=float)
    a1, a2 = params.alpha1, params.alpha2
    out = a2 * (a1 * z[..., 0] + (1.0 - a1) * z[..., 1]) + (1.0 - a2) * z[..., 2]
    return float(out) if out.ndim == 0 else out


def alpha_lattice(step: float) -> np.ndarray:
    """Values ``0, step, 2*step, ...`` up to 1; 1.0 is always included."""
    if not 0.0 < step <= 0.5:
        raise ValueError(f"grid step must lie in (0, 0.5], got {step}")
    k = int(np.floor(1.0 / step + 1e-9))
    values = np.round(np.arange(k + 1) * step, 12)
    if values[-1] < 1.0:
        values = np.r_[values, 1.0]
    return values


@dataclass
class GridSearchResult:
    params: AggregationParams
    auc: float
    n_evaluations: int
    alpha1_values: np.ndarray
    alpha2_values: np.ndarray
    # auc_grid[i, j] is the AUC at (alpha1_values[i], alpha2_values[j])
    auc_grid: np.ndarray


def grid_search_normalized(normalized: np.ndarray, labels, step: float = 0.05,
                           alpha1_values=None, alpha2_values=None) -> GridSearchResult:
    """Exhaustive AUC search over the (alpha1, alpha2) lattice.

    Ties are broken toward the smallest alpha1, then the smallest alpha2.
    """
    y = np.asarray(labels).astype(bool)
    if y.all() or not y.any():
        raise MetricsError("grid search needs both normal and anomalous validation samples")
    a1s = alpha_lattice(step) if alpha1_values is None else np.asarray(alpha1_values, dtype=float)
    a2s = alpha_lattice(step) if alpha2_values is None else np.asarray(alpha2_values, dtype=float)
    grid = np.empty((a1s.size, a2s.size))
    best = (-1.0, None)
    for i, a1 in enumerate(a1s):
        for j, a2 in enumerate(a2s):
            p = AggregationParams(float(a1), float(a2))
            auc = auc_score(aggregate(normalized, p), y)
            grid[i, j] = auc
            if auc > best[0]:  # strict: earlier (smaller) alphas win ties
                best = (auc, p)
    return GridSearchResult(best[1], best[0], grid.size, a1s, a2s, grid)


def grid_search(forest: HybridForest, normalizer: ScoreNormalizer, validation, labels,
                grid_step: float = 0.05) -> GridSearchResult:
    """Select (alpha1, alpha2) maximizing AUC on labelled validation data."""
    z = normalizer.transform(forest.raw_scores(validation))
    return grid_search_normalized(z, labels, step=grid_step)
