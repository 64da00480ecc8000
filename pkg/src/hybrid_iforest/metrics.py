"""ROC curves, AUC and score histograms."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata


class MetricsError(ValueError):
    pass


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def trapezoid_area(self) -> float:
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2.0))


def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    if s.shape != y.shape:
        raise MetricsError(f"got {s.size} scores but {y.size} labels")
    if not np.all(np.isfinite(s)):
        raise MetricsError("scores must be finite")
    return s, y


def auc_score(scores, labels) -> float:
    """Mann-Whitney AUC with mid-ranks for ties; anomalies (label 1) are positive."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("AUC needs at least one positive and one negative sample")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_auc(scores, labels) -> RocCurve:
    """ROC curve from a threshold sweep over the distinct scores, plus its AUC.

    Higher scores mean "more anomalous". Tied scores move the curve
    diagonally, which is why the trapezoidal area equals the mid-rank AUC.
    """
    s, y = _check(scores, labels)
    auc = auc_score(s, y)
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    # last index of each block of equal scores
    last = np.r_[np.nonzero(np.diff(s_sorted))[0], s_sorted.size - 1]
    tp = np.cumsum(y_sorted)[last]
    fp = (last + 1) - tp
    n_pos, n_neg = y.sum(), (~y).sum()
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    thresholds = np.r_[np.inf, s_sorted[last]]
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds, auc=auc)


@dataclass
class ScoreHistogram:
    edges: np.ndarray
    negative: np.ndarray
    positive: np.ndarray


def score_histogram(scores, labels, bins: int = 50) -> ScoreHistogram:
    """Per-label counts over equal-width bins spanning the pooled score range."""
    if bins < 1:
        raise MetricsError(f"bins must be >= 1, got {bins}")
    s, y = _check(scores, labels)
    if s.size == 0:
        edges = np.linspace(0.0, 1.0, bins + 1)
    else:
        lo, hi = float(s.min()), float(s.max())
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        edges = np.linspace(lo, hi, bins + 1)
    neg, _ = np.histogram(s[~y], bins=edges)
    pos, _ = np.histogram(s[y], bins=edges)
    return ScoreHistogram(edges=edges, negative=neg, positive=pos)


def write_roc(path, curve: RocCurve, delimiter: str = ",") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["fpr", "tpr", "threshold"])
        for f, t, th in zip(curve.fpr, curve.tpr, curve.thresholds):
            w.writerow([repr(float(f)), repr(float(t)), repr(float(th))])


def write_histogram(path, hist: ScoreHistogram, delimiter: str = ",") -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "normal", "anomaly"])
        for lo, hi, n, p in zip(hist.edges[:-1], hist.edges[1:], hist.negative, hist.positive):
            w.writerow([repr(float(lo)), repr(float(hi)), int(n), int(p)])
