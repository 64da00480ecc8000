"""2-D annulus benchmark with three Gaussian anomaly clusters, and the
experiments run on it (blind spot, contamination, leaf occupancy)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from .forest import build_forest, default_l_max
from .metrics import auc_score
from .scoring import AggregationParams, aggregate, fit_normalizer, grid_search_normalized

logger = logging.getLogger(__name__)

CLUSTERS = ("red", "green", "cyan")


@dataclass(frozen=True)
class GaussianCluster:
    mean: tuple[float, float]
    cov_diag: tuple[float, float]


@dataclass(frozen=True)
class TorusConfig:
    n_train: int = 1000
    n_test: int = 1000
    n_per_cluster: int = 1000
    r_inner: float = 1.5
    r_outer: float = 4.0
    red: GaussianCluster = GaussianCluster((3.0, 3.0), (0.25, 0.25))
    green: GaussianCluster = GaussianCluster((0.0, 0.0), (0.5, 0.5))
    cyan: GaussianCluster = GaussianCluster((-3.0, -3.0), (0.25, 0.25))
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.r_inner < self.r_outer:
            raise ValueError(f"need 0 <= r_inner < r_outer, got {self.r_inner}, {self.r_outer}")
        if min(self.n_train, self.n_test, self.n_per_cluster) < 1:
            raise ValueError("all sample counts must be >= 1")


@dataclass
class TorusDataset:
    train: np.ndarray
    test: np.ndarray
    red: np.ndarray
    green: np.ndarray
    cyan: np.ndarray
    # independent draw from the red cluster, used as labelled anomalies
    red_labeled: np.ndarray


def sample_annulus(n: int, r_inner: float, r_outer: float, rng: np.random.Generator) -> np.ndarray:
    """Area-uniform points in the annulus ``r_inner <= |p| <= r_outer``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0 <= r_inner < r_outer:
        raise ValueError(f"need 0 <= r_inner < r_outer, got {r_inner}, {r_outer}")
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    u = rng.uniform(0.0, 1.0, n)
    r = np.sqrt(u * (r_outer**2 - r_inner**2) + r_inner**2)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def sample_gaussian(n: int, mean, cov_diag, rng: np.random.Generator) -> np.ndarray:
    """Axis-aligned Gaussian samples (diagonal covariance)."""
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(cov_diag, dtype=float)
    if np.any(var <= 0):
        raise ValueError(f"variances must be positive, got {cov_diag}")
    return mean + rng.standard_normal((n, mean.size)) * np.sqrt(var)


def make_torus_dataset(config: TorusConfig, n_labeled: int = 5) -> TorusDataset:
    rng = np.random.default_rng(config.seed)
    train = sample_annulus(config.n_train, config.r_inner, config.r_outer, rng)
    test = sample_annulus(config.n_test, config.r_inner, config.r_outer, rng)
    clusters = {
        name: sample_gaussian(config.n_per_cluster, c.mean, c.cov_diag, rng)
        for name, c in (("red", config.red), ("green", config.green), ("cyan", config.cyan))
    }
    labeled = sample_gaussian(max(n_labeled, 0), config.red.mean, config.red.cov_diag, rng)
    return TorusDataset(train=train, test=test, red_labeled=labeled, **clusters)


@dataclass(frozen=True)
class ForestParams:
    psi: int = 64
    t: int = 512
    l_max: int | None = None
    seed: int = 0


@dataclass
class DetectorResult:
    auc_red: float
    auc_green: float
    auc_cyan: float
    auc_global: float
    alpha1: float = 1.0
    alpha2: float = 1.0


@dataclass
class BlindSpotReport:
    detectors: dict[str, DetectorResult]
    n_labeled: int

    def rows(self) -> list[dict]:
        return [{"detector": name, **asdict(res)} for name, res in self.detectors.items()]


def _cluster_aucs(normal_scores, cluster_scores: dict[str, np.ndarray]) -> dict[str, float]:
    out = {}
    for name, s in cluster_scores.items():
        out[f"auc_{name}"] = auc_score(np.r_[normal_scores, s], np.r_[np.zeros(len(normal_scores)), np.ones(len(s))])
    pooled = np.concatenate(list(cluster_scores.values()))
    out["auc_global"] = auc_score(np.r_[normal_scores, pooled],
                                  np.r_[np.zeros(len(normal_scores)), np.ones(len(pooled))])
    return out


def run_blind_spot_experiment(config: TorusConfig = TorusConfig(), params: ForestParams = ForestParams(),
                              n_labeled: int = 5, grid_step: float = 0.05) -> BlindSpotReport:
    """Compare IF, HIF1 and HIF2 on one draw of the annulus benchmark.

    IF and HIF1 come from the anomaly-free forest; HIF2 uses the same forest
    after ``n_labeled`` red anomalies have been inserted. The alphas of HIF1
    and HIF2 are chosen by grid search on the pooled test AUC.
    """
    data = make_torus_dataset(config, n_labeled)
    forest = build_forest(data.train, psi=params.psi, t=params.t, l_max=params.l_max, seed=params.seed)
    test_sets = {"normal": data.test, "red": data.red, "green": data.green, "cyan": data.cyan}
    X = np.concatenate(list(test_sets.values()))
    y = np.r_[np.zeros(len(data.test)), np.ones(len(X) - len(data.test))]
    bounds = np.cumsum([0] + [len(v) for v in test_sets.values()])

    def evaluate(scores, a1=1.0, a2=1.0) -> DetectorResult:
        parts = {name: scores[bounds[i]:bounds[i + 1]] for i, name in enumerate(test_sets)}
        normal = parts.pop("normal")
        return DetectorResult(alpha1=a1, alpha2=a2, **_cluster_aucs(normal, parts))

    normalizer = fit_normalizer(forest, data.train)
    z = normalizer.transform(forest.raw_scores(X))
    detectors = {"IF": evaluate(z[:, 0])}
    hif1 = grid_search_normalized(z, y, step=grid_step, alpha2_values=[1.0])
    detectors["HIF1"] = evaluate(aggregate(z, hif1.params), hif1.params.alpha1, 1.0)

    for x in data.red_labeled:
        forest.add_anomaly(x, "red")
    forest.finalize_anomaly_centroids()
    normalizer = fit_normalizer(forest, data.train)
    z = normalizer.transform(forest.raw_scores(X))
    hif2 = grid_search_normalized(z, y, step=grid_step)
    detectors["HIF2"] = evaluate(aggregate(z, hif2.params), hif2.params.alpha1, hif2.params.alpha2)
    return BlindSpotReport(detectors=detectors, n_labeled=n_labeled)


def run_contamination_sweep(config: TorusConfig = TorusConfig(), counts=(0, 1, 2, 5, 10),
                            params: ForestParams = ForestParams(), grid_step: float = 0.05) -> dict[int, float]:
    """Best red-vs-normal AUC as a function of the number of labelled red anomalies."""
    if any(c < 0 for c in counts):
        raise ValueError("anomaly counts must be >= 0")
    data = make_torus_dataset(config, max(counts, default=0))
    X = np.r_[data.test, data.red]
    y = np.r_[np.zeros(len(data.test)), np.ones(len(data.red))]
    out = {}
    for count in counts:
        forest = build_forest(data.train, psi=params.psi, t=params.t, l_max=params.l_max, seed=params.seed)
        for x in data.red_labeled[:count]:
            forest.add_anomaly(x, "red")
        forest.finalize_anomaly_centroids()
        z = fit_normalizer(forest, data.train).transform(forest.raw_scores(X))
        out[count] = grid_search_normalized(z, y, step=grid_step).auc
    return out


def measure_leaf_occupancy(train, psi_values, factors=(1.0, 1.1, 1.2), t: int = 100,
                           seed: int = 0) -> dict[float, dict[int, float]]:
    """Mean external-node size for each height rule ``ceil(factor * log2(psi))``."""
    out: dict[float, dict[int, float]] = {}
    for factor in factors:
        out[factor] = {}
        for psi in psi_values:
            if psi < 2:
                raise ValueError(f"psi must be >= 2, got {psi}")
            forest = build_forest(train, psi=psi, t=t, l_max=default_l_max(psi, factor), seed=seed)
            out[factor][psi] = forest.mean_leaf_size()
    return out


def occupancy_dataset(n: int, rng: np.random.Generator) -> np.ndarray:
    """Gaussian cloud, mean (0, 0) and covariance diag(3, 3)."""
    return sample_gaussian(n, (0.0, 0.0), (3.0, 3.0), rng)
