"""Hybrid isolation trees and forests.

Trees are built as plain node objects (``InternalNode`` / ``ExternalNode``).
External nodes keep the centroid of the training points that reached them and,
once labelled anomalies are inserted, the anomalies routed to them together
with their centroid.

Scoring a batch of instances goes through a flattened, array-based copy of
the whole forest so that every instance is routed through every tree with a
handful of numpy operations per depth level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np

EULER_GAMMA = 0.5772156649


class ForestError(ValueError):
    """Raised on invalid forest input (bad shapes, non-finite values, ...)."""


class FinalizedForestError(RuntimeError):
    """Raised when anomalies are added to a finalized forest."""


def average_path_length(n: int) -> float:
    """Average path length of an unsuccessful BST search over ``n`` keys.

    Returns 0 for ``n <= 1``; the harmonic number H(i) is estimated as
    ``ln(i) + EULER_GAMMA``.
    """
    if n <= 1:
        return 0.0
    return 2.0 * (math.log(n - 1) + EULER_GAMMA) - 2.0 * (n - 1) / n


def _c_array(sizes: np.ndarray) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=float)
    out = np.zeros_like(sizes)
    big = sizes > 1
    s = sizes[big]
    out[big] = 2.0 * (np.log(s - 1) + EULER_GAMMA) - 2.0 * (s - 1) / s
    return out


def default_l_max(psi: int, factor: float = 1.1) -> int:
    """Height limit ``ceil(factor * log2(psi))``.

    ``factor=1.0`` gives the classic isolation forest limit.
    """
    if psi < 2:
        raise ForestError(f"psi must be >= 2, got {psi}")
    # guard against 1.2 * 5 = 6.000000000000001 style rounding
    return max(1, math.ceil(factor * math.log2(psi) - 1e-9))


@dataclass
class ExternalNode:
    size: int
    normal_centroid: np.ndarray | None = None
    anomaly_points: list[np.ndarray] = field(default_factory=list)
    anomaly_labels: list[str] = field(default_factory=list)
    anomaly_centroid: np.ndarray | None = None

    is_external = True


@dataclass
class InternalNode:
    split_dim: int
    split_val: float
    left: "TreeNode"
    right: "TreeNode"

    is_external = False


TreeNode = Union[InternalNode, ExternalNode]


def _as_matrix(data, d: int | None = None) -> np.ndarray:
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise ForestError(f"expected a 2-D array of instances, got shape {X.shape}")
    if d is not None and X.shape[1] != d:
        raise ForestError(f"dimensionality mismatch: expected {d}, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ForestError("instances must contain only finite values")
    return X


def _as_instance(x, d: int) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1 or v.shape[0] != d:
        raise ForestError(f"dimensionality mismatch: expected {d}, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ForestError("instances must contain only finite values")
    return v


def _leaf(sample: np.ndarray) -> ExternalNode:
    if len(sample) == 0:
        return ExternalNode(size=0)
    if len(sample) == 1:
        return ExternalNode(size=1, normal_centroid=sample[0].copy())
    return ExternalNode(size=len(sample), normal_centroid=sample.mean(axis=0))


def build_tree(sample, depth: int, l_max: int, rng: np.random.Generator) -> TreeNode:
    """Recursively build one hybrid isolation tree.

    A node becomes external when the height limit is reached, when at most
    one point is left, or when the randomly drawn dimension is constant over
    the sample (no split value exists strictly between min and max).
    """
    sample = _as_matrix(sample) if not isinstance(sample, np.ndarray) or sample.ndim != 2 else sample
    if depth < 0:
        raise ForestError("depth must be >= 0")
    return _build(sample, depth, l_max, rng)


def _build(S: np.ndarray, depth: int, l_max: int, rng: np.random.Generator) -> TreeNode:
    if depth >= l_max or len(S) <= 1:
        return _leaf(S)
    q = int(rng.integers(S.shape[1]))
    column = S[:, q]
    lo, hi = column.min(), column.max()
    if lo == hi:
        return _leaf(S)
    p = rng.uniform(lo, hi)
    while p <= lo:  # uniform() is half-open; an empty left child is useless
        p = rng.uniform(lo, hi)
    go_left = column < p
    return InternalNode(
        split_dim=q,
        split_val=float(p),
        left=_build(S[go_left], depth + 1, l_max, rng),
        right=_build(S[~go_left], depth + 1, l_max, rng),
    )


def find_leaf(x: np.ndarray, tree: TreeNode) -> tuple[ExternalNode, int]:
    """Route ``x`` to its external node; returns the node and the edge count."""
    node, e = tree, 0
    while not node.is_external:
        node = node.left if x[node.split_dim] < node.split_val else node.right
        e += 1
    return node, e


def path_components(x, tree: TreeNode) -> tuple[float, float | None, float | None]:
    """Path length and centroid distances of ``x`` in a single tree.

    Returns ``(h, delta, delta_a)`` where ``h`` is the edge count plus the
    unsuccessful-search correction for the reached leaf, ``delta`` is the
    distance to the leaf's normal-data centroid and ``delta_a`` the distance
    to its anomaly centroid (``None`` when the respective centroid is absent).
    """
    x = np.asarray(x, dtype=float)
    leaf, e = find_leaf(x, tree)
    h = e + average_path_length(leaf.size)
    delta = None if leaf.normal_centroid is None else float(np.linalg.norm(x - leaf.normal_centroid))
    delta_a = None if leaf.anomaly_centroid is None else float(np.linalg.norm(x - leaf.anomaly_centroid))
    return h, delta, delta_a


def iter_leaves(tree: TreeNode) -> Iterator[tuple[ExternalNode, int]]:
    """Yield ``(leaf, depth)`` pairs in left-to-right order."""
    stack = [(tree, 0)]
    while stack:
        node, depth = stack.pop()
        if node.is_external:
            yield node, depth
        else:
            stack.append((node.right, depth + 1))
            stack.append((node.left, depth + 1))


@dataclass
class ScoreTriple:
    """Raw score components, scalars for one instance or arrays for a batch."""

    path_score: np.ndarray | float
    centroid_score: np.ndarray | float
    anomaly_ratio_score: np.ndarray | float
    mean_path_length: np.ndarray | float

    def as_array(self) -> np.ndarray:
        """Stack (path, centroid, anomaly-ratio) into an ``(n, 3)`` array."""
        return np.column_stack(
            [np.atleast_1d(self.path_score), np.atleast_1d(self.centroid_score), np.atleast_1d(self.anomaly_ratio_score)]
        )


class _FlatForest:
    """Array view of all trees, concatenated node by node."""

    def __init__(self, trees: Sequence[TreeNode], d: int):
        split_dim, split_val, left, right, depth, size = [], [], [], [], [], []
        centroid, has_centroid, a_centroid, has_a = [], [], [], []
        roots = []
        zero = np.zeros(d)
        for tree in trees:
            roots.append(len(split_dim))
            # pre-order; children indices are patched once known
            stack = [(tree, 0, -1, False)]
            while stack:
                node, dep, parent, is_right = stack.pop()
                idx = len(split_dim)
                if parent >= 0:
                    (right if is_right else left)[parent] = idx
                depth.append(dep)
                left.append(-1)
                right.append(-1)
                if node.is_external:
                    split_dim.append(-1)
                    split_val.append(0.0)
                    size.append(node.size)
                    has_centroid.append(node.normal_centroid is not None)
                    centroid.append(zero if node.normal_centroid is None else node.normal_centroid)
                    has_a.append(node.anomaly_centroid is not None)
                    a_centroid.append(zero if node.anomaly_centroid is None else node.anomaly_centroid)
                else:
                    split_dim.append(node.split_dim)
                    split_val.append(node.split_val)
                    size.append(0)
                    has_centroid.append(False)
                    centroid.append(zero)
                    has_a.append(False)
                    a_centroid.append(zero)
                    stack.append((node.right, dep + 1, idx, True))
                    stack.append((node.left, dep + 1, idx, False))
        self.roots = np.asarray(roots, dtype=np.int64)
        self.split_dim = np.asarray(split_dim, dtype=np.int64)
        self.split_val = np.asarray(split_val, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.h_leaf = np.asarray(depth, dtype=float) + _c_array(np.asarray(size))
        self.max_depth = int(max(depth)) if depth else 0
        self.centroid = np.asarray(centroid, dtype=float).reshape(-1, d)
        self.has_centroid = np.asarray(has_centroid, dtype=bool)
        self.a_centroid = np.asarray(a_centroid, dtype=float).reshape(-1, d)
        self.has_a = np.asarray(has_a, dtype=bool)

    def leaves(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each instance in each tree, shape ``(n, t)``."""
        n = X.shape[0]
        node = np.broadcast_to(self.roots, (n, len(self.roots))).copy()
        rows = np.arange(n)[:, None]
        for _ in range(self.max_depth):
            dim = self.split_dim[node]
            internal = dim >= 0
            if not internal.any():
                break
            val = X[rows, np.where(internal, dim, 0)]
            nxt = np.where(val < self.split_val[node], self.left[node], self.right[node])
            node = np.where(internal, nxt, node)
        return node


class HybridForest:
    """Ensemble of hybrid isolation trees.

    Use :func:`build_forest` to construct one. Labelled anomalies are added
    with :meth:`add_anomaly` and committed with
    :meth:`finalize_anomaly_centroids`, after which the forest is read-only.
    """

    def __init__(self, trees: list[TreeNode], psi: int, l_max: int, d: int, rng_seed: int,
                 anomalies_finalized: bool = False):
        if len(trees) < 1:
            raise ForestError("a forest needs at least one tree")
        if psi < 2 or l_max < 1 or d < 1:
            raise ForestError(f"invalid forest parameters psi={psi}, l_max={l_max}, d={d}")
        self.trees = trees
        self.psi = psi
        self.l_max = l_max
        self.d = d
        self.rng_seed = rng_seed
        self.anomalies_finalized = anomalies_finalized
        # indices into the training set used by each tree; only set by build_forest
        self.sample_indices: list[np.ndarray] | None = None
        self._flat: _FlatForest | None = None

    @property
    def t(self) -> int:
        return len(self.trees)

    @property
    def n_anomalies(self) -> int:
        """Number of labelled anomalies inserted (counted on the first tree)."""
        return sum(len(leaf.anomaly_points) for leaf, _ in iter_leaves(self.trees[0]))

    def add_anomaly(self, x, label: str) -> None:
        """Attach a labelled anomaly to the leaf it reaches in every tree."""
        if self.anomalies_finalized:
            raise FinalizedForestError("anomaly centroids are finalized; no further insertions accepted")
        x = _as_instance(x, self.d)
        for tree in self.trees:
            leaf, _ = find_leaf(x, tree)
            leaf.anomaly_points.append(x.copy())
            leaf.anomaly_labels.append(str(label))
        self._flat = None

    def finalize_anomaly_centroids(self) -> None:
        """Compute the anomaly centroid of every leaf holding anomalies."""
        for tree in self.trees:
            for leaf, _ in iter_leaves(tree):
                if leaf.anomaly_points:
                    leaf.anomaly_centroid = np.mean(leaf.anomaly_points, axis=0)
                else:
                    leaf.anomaly_centroid = None
        self.anomalies_finalized = True
        self._flat = None

    def reopen(self) -> None:
        """Allow further insertions; the next finalization recomputes all centroids."""
        self.anomalies_finalized = False
        self._flat = None

    def _flattened(self) -> _FlatForest:
        if self._flat is None:
            self._flat = _FlatForest(self.trees, self.d)
        return self._flat

    def leaves(self, X) -> np.ndarray:
        X = _as_matrix(X, self.d)
        return self._flattened().leaves(X)

    def raw_scores(self, X, chunk_size: int | None = None) -> ScoreTriple:
        """Raw score components for a batch of instances (arrays of length n)."""
        X = _as_matrix(X, self.d)
        flat = self._flattened()
        n = X.shape[0]
        if chunk_size is None:
            chunk_size = max(1, (1 << 21) // max(1, self.t * self.d))
        c_psi = average_path_length(self.psi)
        mean_h = np.empty(n)
        s_c = np.empty(n)
        s_a = np.empty(n)
        for start in range(0, n, chunk_size):
            Xc = X[start:start + chunk_size]
            leaf = flat.leaves(Xc)
            mean_h[start:start + len(Xc)] = flat.h_leaf[leaf].mean(axis=1)

            delta = np.linalg.norm(Xc[:, None, :] - flat.centroid[leaf], axis=2)
            has_c = flat.has_centroid[leaf]
            n_c = has_c.sum(axis=1)
            sum_c = np.where(has_c, delta, 0.0).sum(axis=1)
            s_c[start:start + len(Xc)] = np.divide(sum_c, n_c, out=np.zeros(len(Xc)), where=n_c > 0)

            has_a = flat.has_a[leaf]
            if has_a.any():
                delta_a = np.linalg.norm(Xc[:, None, :] - flat.a_centroid[leaf], axis=2)
                # both expectations are taken over the trees whose leaf has an anomaly centroid
                both = has_a & has_c
                k = both.sum(axis=1)
                num = np.where(both, delta, 0.0).sum(axis=1)
                den = np.where(both, delta_a, 0.0).sum(axis=1)
                ok = (k > 0) & (den > 0)
                s_a[start:start + len(Xc)] = np.divide(num, den, out=np.zeros(len(Xc)), where=ok)
            else:
                s_a[start:start + len(Xc)] = 0.0
        path_score = np.power(2.0, -mean_h / c_psi) if c_psi > 0 else np.ones(n)
        return ScoreTriple(path_score, s_c, s_a, mean_h)

    def raw_score(self, x) -> ScoreTriple:
        """Raw score components for one instance, as floats."""
        x = _as_instance(x, self.d)
        batch = self.raw_scores(x[None, :])
        return ScoreTriple(
            float(batch.path_score[0]),
            float(batch.centroid_score[0]),
            float(batch.anomaly_ratio_score[0]),
            float(batch.mean_path_length[0]),
        )

    def mean_leaf_size(self) -> float:
        """Mean number of training points per external node, over all trees."""
        sizes = [leaf.size for tree in self.trees for leaf, _ in iter_leaves(tree)]
        return float(np.mean(sizes))


def build_forest(train, psi: int = 256, t: int = 100, l_max: int | None = None, seed: int = 0) -> HybridForest:
    """Build ``t`` hybrid trees on random subsamples of ``train``.

    Each tree draws ``min(psi, len(train))`` points without replacement from
    its own random stream, spawned from ``seed`` and the tree index, so the
    result depends only on the arguments.

    Parameters
    ----------
    train
        Training instances, shape ``(n, d)`` with ``n >= 2``.
    psi
        Subsample size per tree.
    t
        Number of trees.
    l_max
        Height limit; defaults to ``ceil(1.1 * log2(psi))``.
    seed
        Root seed for all randomness.
    """
    X = _as_matrix(train)
    n, d = X.shape
    if n < 2:
        raise ForestError(f"need at least 2 training instances, got {n}")
    if psi < 2:
        raise ForestError(f"psi must be >= 2, got {psi}")
    if t < 1:
        raise ForestError(f"t must be >= 1, got {t}")
    if l_max is None:
        l_max = default_l_max(psi)
    if l_max < 1:
        raise ForestError(f"l_max must be >= 1, got {l_max}")
    m = min(psi, n)
    trees, samples = [], []
    for child in np.random.SeedSequence(seed).spawn(t):
        rng = np.random.default_rng(child)
        idx = np.sort(rng.choice(n, size=m, replace=False))
        samples.append(idx)
        trees.append(_build(X[idx], 0, l_max, rng))
    forest = HybridForest(trees, psi=psi, l_max=l_max, d=d, rng_seed=seed)
    forest.sample_indices = samples
    return forest


def raw_scores(forest: HybridForest, x) -> ScoreTriple:
    """Score one instance (1-D input) or a batch (2-D input)."""
    if np.ndim(x) == 1:
        return forest.raw_score(x)
    return forest.raw_scores(x)
