import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybrid_iforest.forest import (
    ExternalNode,
    FinalizedForestError,
    ForestError,
    HybridForest,
    InternalNode,
    average_path_length,
    build_forest,
    build_tree,
    default_l_max,
    find_leaf,
    iter_leaves,
    path_components,
    raw_scores,
)
from hybrid_iforest.model_io import tree_to_records


# -- independent reference implementations ---------------------------------

def naive_c(n):
    if n <= 1:
        return 0.0
    harmonic = math.log(n - 1) + 0.5772156649
    return 2 * harmonic - 2 * (n - 1) / n


def naive_path_length(x, node, e=0):
    """Straight transcription of the recursive path length procedure."""
    if isinstance(node, ExternalNode):
        return e + naive_c(node.size)
    if x[node.split_dim] < node.split_val:
        return naive_path_length(x, node.left, e + 1)
    return naive_path_length(x, node.right, e + 1)


def naive_leaf(x, node):
    if isinstance(node, ExternalNode):
        return node
    return naive_leaf(x, node.left if x[node.split_dim] < node.split_val else node.right)


# -- average_path_length ----------------------------------------------------

def test_c_of_small_n_is_zero():
    assert average_path_length(0) == 0.0
    assert average_path_length(1) == 0.0


def test_c_of_two():
    # 2 * (ln 1 + 0.5772156649) - 2 * 1 / 2
    assert average_path_length(2) == pytest.approx(0.1544313298, abs=1e-12)


def test_c_of_256_matches_high_precision_value():
    # 30-digit mpmath evaluation of the same formula
    assert average_path_length(256) == pytest.approx(10.244770920116852292, abs=1e-9)
    assert average_path_length(64) == pytest.approx(7.471950782583065376, abs=1e-9)


@pytest.mark.parametrize("n", [2, 3, 10, 64, 100, 4096])
def test_c_matches_naive(n):
    assert average_path_length(n) == pytest.approx(naive_c(n), abs=1e-12)


def test_default_l_max():
    assert default_l_max(64, 1.0) == 6
    assert default_l_max(64) == 7
    assert default_l_max(32, 1.2) == 6  # 1.2 * 5 is exactly 6
    assert default_l_max(4096, 1.2) == 15


# -- build_tree -------------------------------------------------------------

def test_single_point_is_leaf(rng):
    node = build_tree(np.array([[0.5, 0.5]]), 0, 6, rng)
    assert node.is_external
    assert node.size == 1
    np.testing.assert_array_equal(node.normal_centroid, [0.5, 0.5])


def test_depth_cutoff_gives_midpoint_leaf(rng):
    node = build_tree(np.array([[0.0, 0.0], [2.0, 4.0]]), 6, 6, rng)
    assert node.is_external
    assert node.size == 2
    np.testing.assert_allclose(node.normal_centroid, [1.0, 2.0])


def test_identical_points_never_split():
    sample = np.tile([1.0, -2.0, 3.0], (5, 1))
    for seed in range(1000):
        node = build_tree(sample, 0, 8, np.random.default_rng(seed))
        assert node.is_external and node.size == 5


def test_empty_sample_gives_leaf_without_centroid(rng):
    node = build_tree(np.empty((0, 2)), 0, 4, rng)
    assert node.is_external and node.size == 0 and node.normal_centroid is None


def test_split_partitions_sample(rng):
    sample = rng.normal(size=(40, 3))
    tree = build_tree(sample, 0, 20, rng)
    assert not tree.is_external
    lo, hi = sample[:, tree.split_dim].min(), sample[:, tree.split_dim].max()
    assert lo < tree.split_val <= hi
    sizes = sum(leaf.size for leaf, _ in iter_leaves(tree))
    assert sizes == 40


def test_build_tree_rejects_ragged_input(rng):
    with pytest.raises((ForestError, ValueError)):
        build_tree([[1.0, 2.0], [3.0]], 0, 4, rng)


# -- build_forest -----------------------------------------------------------

def test_benchmark_sized_forest(torus_train):
    forest = build_forest(torus_train, psi=64, t=512, seed=3)
    assert forest.t == 512
    assert forest.l_max == 7
    for tree in forest.trees:
        assert max(depth for _, depth in iter_leaves(tree)) <= 7
    assert all(len(idx) == 64 and len(set(idx.tolist())) == 64 for idx in forest.sample_indices)


def test_single_tree_over_whole_set(rng):
    X = rng.normal(size=(30, 2))
    forest = build_forest(X, psi=30, t=1, seed=0)
    assert forest.t == 1
    assert sum(leaf.size for leaf, _ in iter_leaves(forest.trees[0])) == 30
    assert sorted(forest.sample_indices[0].tolist()) == list(range(30))


def test_small_training_set_uses_everything(rng):
    X = rng.normal(size=(10, 2))
    forest = build_forest(X, psi=64, t=3, seed=0)
    assert all(len(idx) == 10 for idx in forest.sample_indices)


def test_same_seed_same_forest(torus_train):
    a = build_forest(torus_train, psi=32, t=20, seed=11)
    b = build_forest(torus_train, psi=32, t=20, seed=11)
    c = build_forest(torus_train, psi=32, t=20, seed=12)
    assert [tree_to_records(t) for t in a.trees] == [tree_to_records(t) for t in b.trees]
    assert [tree_to_records(t) for t in a.trees] != [tree_to_records(t) for t in c.trees]


@pytest.mark.parametrize("bad", [
    dict(train=np.zeros((1, 2))),
    dict(train=np.zeros((0, 2))),
    dict(train=np.array([[0.0, np.nan], [1.0, 1.0]])),
    dict(train=np.array([[0.0, np.inf], [1.0, 1.0]])),
    dict(train=np.zeros((5, 2)), psi=1),
    dict(train=np.zeros((5, 2)), t=0),
])
def test_build_forest_rejects(bad):
    train = bad.pop("train")
    with pytest.raises(ForestError):
        build_forest(train, **bad)


def test_leaf_centroids_are_means_of_routed_sample(torus_train):
    forest = build_forest(torus_train, psi=64, t=25, seed=5)
    for tree, idx in zip(forest.trees, forest.sample_indices):
        members: dict[int, list] = {}
        for x in torus_train[idx]:
            members.setdefault(id(naive_leaf(x, tree)), []).append(x)
        for leaf, _ in iter_leaves(tree):
            pts = members.get(id(leaf), [])
            assert leaf.size == len(pts)
            if pts:
                np.testing.assert_allclose(leaf.normal_centroid, np.mean(pts, axis=0), atol=1e-12, rtol=0)


# -- path_components --------------------------------------------------------

def test_path_components_single_leaf():
    tree = ExternalNode(size=1, normal_centroid=np.array([1.0, 1.0]))
    h, delta, delta_a = path_components([4.0, 5.0], tree)
    assert h == 0.0
    assert delta == pytest.approx(5.0)
    assert delta_a is None


def test_path_components_zero_distance_at_centroid(rng):
    X = rng.normal(size=(20, 2))
    tree = build_tree(X, 0, 3, rng)
    for leaf, _ in iter_leaves(tree):
        if leaf.normal_centroid is not None:
            x = leaf.normal_centroid
            if naive_leaf(x, tree) is leaf:
                assert path_components(x, tree)[1] == 0.0


def test_path_components_match_naive_traversal(rng):
    X = rng.uniform(-1, 1, size=(200, 2))
    tree = build_tree(X[:64], 0, 7, rng)
    for x in rng.uniform(-1.5, 1.5, size=(50, 2)):
        h, delta, _ = path_components(x, tree)
        assert h == naive_path_length(x, tree)
        assert delta == pytest.approx(np.linalg.norm(x - naive_leaf(x, tree).normal_centroid), abs=1e-12)


@pytest.mark.parametrize("psi", [2, 5, 9, 16])
def test_training_points_path_length_exact(psi):
    rng = np.random.default_rng(psi)
    X = rng.normal(size=(psi, 3))
    forest = build_forest(X, psi=psi, t=1, l_max=default_l_max(psi, 1.0), seed=psi)
    batch = forest.raw_scores(X).mean_path_length
    for x, h in zip(X, batch):
        assert path_components(x, forest.trees[0])[0] == naive_path_length(x, forest.trees[0])
        assert h == pytest.approx(naive_path_length(x, forest.trees[0]), abs=1e-12)


def test_path_components_dimension_mismatch(rng):
    forest = build_forest(rng.normal(size=(20, 3)), psi=8, t=2, seed=0)
    with pytest.raises(ForestError):
        forest.raw_score([1.0, 2.0])


# -- anomalies --------------------------------------------------------------

def test_add_anomaly_single_leaf_tree():
    leaf = ExternalNode(size=3, normal_centroid=np.zeros(2))
    forest = HybridForest([leaf], psi=3, l_max=2, d=2, rng_seed=0)
    forest.add_anomaly([1.0, 2.0], "red")
    assert len(leaf.anomaly_points) == 1
    np.testing.assert_array_equal(leaf.anomaly_points[0], [1.0, 2.0])


def test_add_anomaly_routing_consistency(torus_train, rng):
    forest = build_forest(torus_train, psi=64, t=10, seed=1)
    anomalies = rng.uniform(-5, 5, size=(100, 2))
    for i, x in enumerate(anomalies):
        forest.add_anomaly(x, f"a{i}")
    for tree in forest.trees:
        for i, x in enumerate(anomalies):
            leaf, _ = find_leaf(x, tree)
            assert naive_leaf(x, tree) is leaf
            assert f"a{i}" in leaf.anomaly_labels


def test_two_labels_same_leaf():
    leaf = ExternalNode(size=3, normal_centroid=np.zeros(2))
    forest = HybridForest([leaf], psi=3, l_max=2, d=2, rng_seed=0)
    forest.add_anomaly([1.0, 2.0], "red")
    forest.add_anomaly([1.5, 2.0], "red")
    assert leaf.anomaly_labels == ["red", "red"]
    assert len(leaf.anomaly_points) == len(leaf.anomaly_labels)


def test_add_anomaly_rejected_after_finalize(rng):
    forest = build_forest(rng.normal(size=(20, 2)), psi=8, t=2, seed=0)
    forest.finalize_anomaly_centroids()
    with pytest.raises(FinalizedForestError):
        forest.add_anomaly([0.0, 0.0], "x")


def test_add_anomaly_dimension_mismatch(rng):
    forest = build_forest(rng.normal(size=(20, 2)), psi=8, t=2, seed=0)
    with pytest.raises(ForestError):
        forest.add_anomaly([0.0, 0.0, 1.0], "x")


def test_finalize_mean_of_two():
    leaf = ExternalNode(size=3, normal_centroid=np.zeros(2))
    empty = ExternalNode(size=2, normal_centroid=np.ones(2))
    root = InternalNode(split_dim=1, split_val=0.5, left=leaf, right=empty)
    forest = HybridForest([root], psi=5, l_max=2, d=2, rng_seed=0)
    forest.add_anomaly([1.0, 0.0], "a")
    forest.add_anomaly([3.0, 0.0], "b")
    forest.finalize_anomaly_centroids()
    np.testing.assert_array_equal(leaf.anomaly_centroid, [2.0, 0.0])
    assert empty.anomaly_centroid is None
    assert forest.anomalies_finalized


def test_finalize_is_idempotent_and_matches_brute_force(torus_train, rng):
    forest = build_forest(torus_train, psi=64, t=30, seed=2)
    for x in rng.normal((3, 3), 0.5, size=(40, 2)):
        forest.add_anomaly(x, "red")
    forest.finalize_anomaly_centroids()
    first = [[None if l.anomaly_centroid is None else l.anomaly_centroid.copy() for l, _ in iter_leaves(t)]
             for t in forest.trees]
    forest.finalize_anomaly_centroids()
    for tree, before in zip(forest.trees, first):
        for (leaf, _), c in zip(iter_leaves(tree), before):
            if not leaf.anomaly_points:
                assert leaf.anomaly_centroid is None and c is None
                continue
            brute = [sum(p[k] for p in leaf.anomaly_points) / len(leaf.anomaly_points) for k in range(2)]
            np.testing.assert_allclose(leaf.anomaly_centroid, brute, atol=1e-12, rtol=0)
            np.testing.assert_array_equal(leaf.anomaly_centroid, c)


# -- raw scores -------------------------------------------------------------

def test_path_score_is_half_at_c_psi():
    forest = HybridForest([ExternalNode(size=64, normal_centroid=np.zeros(2))], psi=64, l_max=7, d=2, rng_seed=0)
    triple = forest.raw_score([0.3, 0.1])
    assert triple.mean_path_length == pytest.approx(average_path_length(64))
    assert triple.path_score == pytest.approx(0.5, abs=1e-15)


def test_no_anomalies_means_zero_ratio_score(torus_train, rng):
    forest = build_forest(torus_train, psi=64, t=50, seed=0)
    probe = rng.uniform(-5, 5, size=(300, 2))
    assert np.all(forest.raw_scores(probe).anomaly_ratio_score == 0.0)
    forest.finalize_anomaly_centroids()
    assert np.all(forest.raw_scores(probe).anomaly_ratio_score == 0.0)


def _toy_forest():
    def tree(split, left, right):
        return InternalNode(0, split, left, right)

    def leaf(size, c):
        return ExternalNode(size=size, normal_centroid=np.asarray(c, dtype=float))

    trees = [
        tree(0.0, leaf(3, [-1.0, 0.0]), leaf(5, [1.0, 1.0])),
        tree(0.5, tree(-0.5, leaf(1, [-2.0, 0.0]), leaf(2, [0.0, 0.0])), leaf(5, [2.0, -1.0])),
        leaf(8, [0.2, 0.3]),
    ]
    forest = HybridForest(trees, psi=8, l_max=3, d=2, rng_seed=0)
    forest.add_anomaly([1.2, 0.9], "a")
    forest.add_anomaly([3.0, 3.0], "b")
    forest.add_anomaly([-1.0, 2.0], "c")
    forest.finalize_anomaly_centroids()
    return forest


def test_toy_forest_matches_per_tree_enumeration(rng):
    forest = _toy_forest()
    probes = rng.uniform(-3, 3, size=(50, 2))
    batch = forest.raw_scores(probes)
    for i, x in enumerate(probes):
        triples = [path_components(x, t) for t in forest.trees]
        hs = [h for h, _, _ in triples]
        deltas = [d for _, d, _ in triples if d is not None]
        with_a = [(d, da) for _, d, da in triples if da is not None]
        mean_h = sum(hs) / 3
        expected_sa = 0.0
        if with_a and sum(da for _, da in with_a) > 0:
            expected_sa = (sum(d for d, _ in with_a) / len(with_a)) / (sum(da for _, da in with_a) / len(with_a))
        assert batch.mean_path_length[i] == pytest.approx(mean_h, abs=1e-12)
        assert batch.path_score[i] == pytest.approx(2 ** (-mean_h / naive_c(8)), abs=1e-12)
        assert batch.centroid_score[i] == pytest.approx(sum(deltas) / len(deltas), abs=1e-12)
        assert batch.anomaly_ratio_score[i] == pytest.approx(expected_sa, abs=1e-12)
        single = raw_scores(forest, x)
        assert single.anomaly_ratio_score == pytest.approx(expected_sa, abs=1e-12)


def test_ratio_score_zero_on_anomaly_centroid():
    forest = HybridForest([ExternalNode(size=4, normal_centroid=np.zeros(2))], psi=4, l_max=2, d=2, rng_seed=0)
    forest.add_anomaly([2.0, 2.0], "a")
    forest.finalize_anomaly_centroids()
    assert forest.raw_score([2.0, 2.0]).anomaly_ratio_score == 0.0
    assert forest.raw_score([1.0, 1.0]).anomaly_ratio_score == pytest.approx(1.0)


def test_batch_scoring_matches_tree_walk(torus_train, rng):
    forest = build_forest(torus_train, psi=64, t=40, seed=9)
    for x in rng.normal((3, 3), 0.5, size=(5, 2)):
        forest.add_anomaly(x, "red")
    forest.finalize_anomaly_centroids()
    probes = rng.uniform(-5, 5, size=(60, 2))
    batch = forest.raw_scores(probes, chunk_size=7)
    for i, x in enumerate(probes):
        triples = [path_components(x, t) for t in forest.trees]
        assert batch.mean_path_length[i] == pytest.approx(np.mean([h for h, _, _ in triples]), abs=1e-12)
        assert batch.centroid_score[i] == pytest.approx(np.mean([d for _, d, _ in triples]), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), psi=st.integers(2, 40))
def test_scores_bounded(seed, psi):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(50, 2))
    forest = build_forest(X, psi=psi, t=5, seed=seed)
    probe = rng.normal(scale=3, size=(30, 2))
    s = forest.raw_scores(probe)
    assert np.all((s.path_score > 0) & (s.path_score <= 1))
    assert np.all(s.mean_path_length <= forest.l_max + average_path_length(psi) + 1e-12)
    np.testing.assert_array_equal(s.path_score, np.power(2.0, -s.mean_path_length / average_path_length(psi)))
    again = build_forest(X, psi=psi, t=5, seed=seed).raw_scores(probe)
    np.testing.assert_array_equal(again.as_array(), s.as_array())
