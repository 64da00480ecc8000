"""Model files and numeric dataset files.

A model is a JSON document. Header fields come first; each tree is written
on its own line as a list of pre-order node records, so two model files can
be compared with an ordinary text diff.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .flows import Codebook
from .forest import ExternalNode, HybridForest, InternalNode, TreeNode, iter_leaves
from .scoring import AggregationParams, ScoreNormalizer, aggregate, fit_normalizer

FORMAT_NAME = "hybrid-iforest-model"
FORMAT_VERSION = 1
LABEL_COLUMN = "label"
NEGATIVE_LABELS = {"0", "normal", "benign", "false"}


class ModelFormatError(ValueError):
    pass


class DatasetError(ValueError):
    pass


def _vec(v) -> list[float] | None:
    return None if v is None else [float(a) for a in v]


def tree_to_records(tree: TreeNode) -> list[dict]:
    records = []
    stack = [tree]
    while stack:
        node = stack.pop()
        if node.is_external:
            records.append({
                "kind": "external",
                "size": int(node.size),
                "normal_centroid": _vec(node.normal_centroid),
                "anomaly_points": [_vec(p) for p in node.anomaly_points],
                "anomaly_labels": list(node.anomaly_labels),
                "anomaly_centroid": _vec(node.anomaly_centroid),
            })
        else:
            records.append({"kind": "internal", "split_dim": int(node.split_dim), "split_val": float(node.split_val)})
            stack.append(node.right)
            stack.append(node.left)
    return records


def tree_from_records(records: list[dict]) -> TreeNode:
    it = iter(records)

    def take() -> TreeNode:
        try:
            rec = next(it)
        except StopIteration:
            raise ModelFormatError("truncated tree record list") from None
        if rec["kind"] == "external":
            arr = lambda v: None if v is None else np.asarray(v, dtype=float)  # noqa: E731
            return ExternalNode(
                size=int(rec["size"]),
                normal_centroid=arr(rec["normal_centroid"]),
                anomaly_points=[np.asarray(p, dtype=float) for p in rec["anomaly_points"]],
                anomaly_labels=list(rec["anomaly_labels"]),
                anomaly_centroid=arr(rec["anomaly_centroid"]),
            )
        if rec["kind"] == "internal":
            left = take()
            right = take()
            return InternalNode(int(rec["split_dim"]), float(rec["split_val"]), left, right)
        raise ModelFormatError(f"unknown node kind {rec['kind']!r}")

    root = take()
    if next(it, None) is not None:
        raise ModelFormatError("trailing node records after tree end")
    return root


@dataclass
class ModelArtifact:
    """A fitted forest with its score normalizer and aggregation weights.

    ``normalization_data`` keeps the training instances so that the
    normalizer can be refitted after labelled anomalies are inserted.
    """

    forest: HybridForest
    normalizer: ScoreNormalizer
    params: AggregationParams
    normalization_data: np.ndarray
    codebook: Codebook | None = None

    @classmethod
    def fit(cls, train, forest: HybridForest, params: AggregationParams = AggregationParams()) -> "ModelArtifact":
        train = np.asarray(train, dtype=float)
        return cls(forest, fit_normalizer(forest, train), params, train)

    def refit_normalizer(self) -> None:
        self.normalizer = fit_normalizer(self.forest, self.normalization_data)

    def add_anomalies(self, X, labels) -> int:
        """Insert labelled anomalies, refinalize centroids and refit the normalizer."""
        if self.forest.anomalies_finalized:
            self.forest.reopen()
        if len(X) != len(labels):
            raise ValueError(f"got {len(X)} anomalies but {len(labels)} labels")
        for x, lab in zip(X, labels):
            self.forest.add_anomaly(x, lab)
        self.forest.finalize_anomaly_centroids()
        self.refit_normalizer()
        return len(labels)

    def score(self, X, params: AggregationParams | None = None):
        """Return (aggregated scores, raw components ``(n, 3)``, normalized components)."""
        raw = self.forest.raw_scores(X).as_array()
        z = self.normalizer.transform(raw)
        return aggregate(z, params or self.params), raw, z

    def to_json(self) -> str:
        f = self.forest
        header = {
            "format": FORMAT_NAME,
            "format_version": FORMAT_VERSION,
            "forest": {
                "psi": f.psi, "t": f.t, "l_max": f.l_max, "d": f.d, "seed": f.rng_seed,
                "anomalies_finalized": f.anomalies_finalized,
            },
            "normalizer": {"min": _vec(self.normalizer.mins), "max": _vec(self.normalizer.maxs)},
            "aggregation": {"alpha1": self.params.alpha1, "alpha2": self.params.alpha2},
            "codebook": None if self.codebook is None else self.codebook.to_dict(),
        }
        compact = dict(separators=(",", ":"))
        lines = ["{"]
        for key, value in header.items():
            lines.append(f" {json.dumps(key)}: {json.dumps(value, sort_keys=True)},")
        rows = [json.dumps(_vec(r), **compact) for r in self.normalization_data]
        lines.append(' "normalization_data": [')
        lines.append(",\n".join("  " + r for r in rows))
        lines.append(" ],")
        lines.append(' "trees": [')
        lines.append(",\n".join("  " + json.dumps(tree_to_records(t), sort_keys=True, **compact) for t in f.trees))
        lines.append(" ]")
        lines.append("}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "ModelArtifact":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"model is not valid JSON: {exc}") from None
        if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
            raise ModelFormatError("not a hybrid isolation forest model file")
        version = doc.get("format_version")
        if not isinstance(version, int) or version > FORMAT_VERSION or version < 1:
            raise ModelFormatError(f"unsupported model format_version {version!r} (this build reads <= {FORMAT_VERSION})")
        try:
            fp = doc["forest"]
            trees = [tree_from_records(recs) for recs in doc["trees"]]
            if len(trees) != fp["t"]:
                raise ModelFormatError(f"header says {fp['t']} trees, found {len(trees)}")
            forest = HybridForest(trees, psi=fp["psi"], l_max=fp["l_max"], d=fp["d"], rng_seed=fp["seed"],
                                  anomalies_finalized=fp["anomalies_finalized"])
            norm = ScoreNormalizer(doc["normalizer"]["min"], doc["normalizer"]["max"])
            params = AggregationParams(doc["aggregation"]["alpha1"], doc["aggregation"]["alpha2"])
            data = np.asarray(doc["normalization_data"], dtype=float).reshape(-1, fp["d"])
            codebook = None if doc.get("codebook") is None else Codebook.from_dict(doc["codebook"])
        except (KeyError, TypeError) as exc:
            raise ModelFormatError(f"malformed model file: {exc!r}") from None
        return cls(forest, norm, params, data, codebook)

    @classmethod
    def load(cls, path) -> "ModelArtifact":
        return cls.from_json(Path(path).read_text())


def summarize(forest: HybridForest) -> dict:
    leaves = [leaf for tree in forest.trees for leaf, _ in iter_leaves(tree)]
    return {
        "trees": forest.t,
        "psi": forest.psi,
        "l_max": forest.l_max,
        "d": forest.d,
        "mean_leaf_size": float(np.mean([leaf.size for leaf in leaves])),
        "leaves_per_tree": len(leaves) / forest.t,
        "anomalies": forest.n_anomalies,
    }


def binary_label(value: str) -> int:
    """0 for normal-looking labels (``0``, ``normal``, ``benign``, ``false``), 1 otherwise."""
    v = str(value).strip().lower()
    if v == "":
        raise DatasetError("empty label")
    return 0 if v in NEGATIVE_LABELS else 1


def read_dataset(path, delimiter: str = ","):
    """Read a header-bearing numeric table.

    Every column except ``label`` must be numeric. Returns
    ``(X, labels or None, feature_names)``.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if not header:
            raise DatasetError(f"{path}: empty file (no header row)")
        header = [h.strip() for h in header]
        label_idx = header.index(LABEL_COLUMN) if LABEL_COLUMN in header else None
        feat_idx = [i for i in range(len(header)) if i != label_idx]
        if not feat_idx:
            raise DatasetError(f"{path}: no feature columns")
        rows, labels = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}: line {line_no}: expected {len(header)} fields, got {len(row)}")
            try:
                values = [float(row[i]) for i in feat_idx]
            except ValueError:
                raise DatasetError(f"{path}: line {line_no}: non-numeric feature value") from None
            if not np.all(np.isfinite(values)):
                raise DatasetError(f"{path}: line {line_no}: non-finite feature value")
            rows.append(values)
            if label_idx is not None:
                labels.append(row[label_idx].strip())
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    X = np.asarray(rows, dtype=float)
    return X, (labels if label_idx is not None else None), [header[i] for i in feat_idx]


def write_dataset(path, X, labels=None, names=None, delimiter: str = ",") -> None:
    X = np.asarray(X, dtype=float)
    names = list(names) if names is not None else [f"x{i}" for i in range(X.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(names + ([LABEL_COLUMN] if labels is not None else []))
        for i, row in enumerate(X):
            w.writerow([repr(float(v)) for v in row] + ([labels[i]] if labels is not None else []))
