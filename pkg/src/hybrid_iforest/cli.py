"""``hif`` command-line interface."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import flows as fl
from .forest import ForestError, build_forest
from .metrics import MetricsError, roc_auc, score_histogram, write_histogram, write_roc
from .model_io import DatasetError, ModelArtifact, ModelFormatError, binary_label, read_dataset, summarize, write_dataset
from .scoring import AggregationParams, grid_search
from .synthetic import (
    ForestParams,
    TorusConfig,
    make_torus_dataset,
    measure_leaf_occupancy,
    occupancy_dataset,
    run_blind_spot_experiment,
    run_contamination_sweep,
)

log = logging.getLogger("hif")

SCORE_COLUMNS = [
    "score",
    "path_score",
    "centroid_score",
    "anomaly_ratio_score",
    "path_score_norm",
    "centroid_score_norm",
    "anomaly_ratio_score_norm",
]


class CommandError(Exception):
    pass


def cmd_fit(args) -> None:
    X, _, _ = read_dataset(args.train)
    forest = build_forest(X, psi=args.psi, t=args.trees, l_max=args.lmax, seed=args.seed)
    model = ModelArtifact.fit(X, forest)
    model.save(args.out)
    s = summarize(forest)
    print(f"built {s['trees']} trees (psi={s['psi']}, l_max={s['l_max']}, d={s['d']}); "
          f"mean leaf size {s['mean_leaf_size']:.4f}")


def cmd_add_anomalies(args) -> None:
    model = ModelArtifact.load(args.model)
    X, labels, _ = read_dataset_allow_empty(args.anomalies, model.forest.d)
    if labels is None:
        labels = ["anomaly"] * len(X)
    n = model.add_anomalies(X, labels)
    model.save(args.out or args.model)
    print(f"inserted {n} anomalies ({model.forest.n_anomalies} total)")


def read_dataset_allow_empty(path, d: int):
    try:
        X, labels, names = read_dataset(path)
    except DatasetError as exc:
        if "no data rows" not in str(exc):
            raise
        return np.empty((0, d)), [], []
    if X.shape[1] != d:
        raise CommandError(f"dimension mismatch: model has d={d}, {path} has {X.shape[1]} feature columns")
    return X, labels, names


def _alphas(args, model: ModelArtifact) -> AggregationParams:
    a1 = model.params.alpha1 if args.alpha1 is None else args.alpha1
    a2 = model.params.alpha2 if args.alpha2 is None else args.alpha2
    return AggregationParams(a1, a2)


def cmd_score(args) -> None:
    model = ModelArtifact.load(args.model)
    X, labels, _ = read_dataset(args.data)
    if X.shape[1] != model.forest.d:
        raise CommandError(f"dimension mismatch: model has d={model.forest.d}, data has {X.shape[1]}")
    scores, raw, z = model.score(X, _alphas(args, model))
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_COLUMNS + (["label"] if labels is not None else []))
        for i in range(len(X)):
            row = [repr(float(scores[i]))] + [repr(float(v)) for v in raw[i]] + [repr(float(v)) for v in z[i]]
            w.writerow(row + ([labels[i]] if labels is not None else []))
    print(f"scored {len(X)} rows -> {args.out}")


def cmd_eval(args) -> None:
    with open(args.scores, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or args.column not in rows[0] or "label" not in rows[0]:
        raise CommandError(f"{args.scores}: need a '{args.column}' column and a 'label' column")
    s = np.asarray([float(r[args.column]) for r in rows])
    y = np.asarray([binary_label(r["label"]) for r in rows])
    curve = roc_auc(s, y)
    print(f"AUC {curve.auc:.4f} (n={len(s)}, anomalies={int(y.sum())})")
    if args.roc:
        write_roc(args.roc, curve)
    if args.hist:
        write_histogram(args.hist, score_histogram(s, y, args.bins))


def cmd_gridsearch(args) -> None:
    model = ModelArtifact.load(args.model)
    X, labels, _ = read_dataset(args.data)
    if labels is None:
        raise CommandError(f"{args.data} has no 'label' column")
    y = np.asarray([binary_label(v) for v in labels])
    result = grid_search(model.forest, model.normalizer, X, y, grid_step=args.grid_step)
    print(f"best alpha1={result.params.alpha1:.4f} alpha2={result.params.alpha2:.4f} "
          f"AUC {result.auc:.4f} ({result.n_evaluations} evaluations)")
    if args.surface:
        with open(args.surface, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["alpha1", "alpha2", "auc"])
            for i, a1 in enumerate(result.alpha1_values):
                for j, a2 in enumerate(result.alpha2_values):
                    w.writerow([repr(float(a1)), repr(float(a2)), repr(float(result.auc_grid[i, j]))])
    if args.save:
        model.params = result.params
        model.save(args.model)


def cmd_synth(args) -> None:
    cfg = TorusConfig(n_train=args.n_train, n_test=args.n_test, n_per_cluster=args.n_per_cluster, seed=args.seed)
    data = make_torus_dataset(cfg, args.n_labeled)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out / "train.csv", data.train)
    write_dataset(out / "test.csv", data.test, ["normal"] * len(data.test))
    for name in ("red", "green", "cyan"):
        pts = getattr(data, name)
        write_dataset(out / f"{name}.csv", pts, [name] * len(pts))
    write_dataset(out / "red_labeled.csv", data.red_labeled, ["red"] * len(data.red_labeled))
    pooled = np.vstack([data.test, data.red, data.green, data.cyan])
    tags = ["normal"] * len(data.test) + ["red"] * len(data.red) + ["green"] * len(data.green) + ["cyan"] * len(data.cyan)
    write_dataset(out / "eval.csv", pooled, tags)
    print(f"wrote {len(data.train)} train, {len(data.test)} test, {cfg.n_per_cluster} per cluster rows to {out}")


def cmd_flows(args) -> None:
    errors: list = []
    with open(args.flows, newline="") as fh:
        records = fl.parse_flows(fh, strict=args.strict, errors=errors)
    for err in errors:
        print(f"warning: skipped {err}", file=sys.stderr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for layer, recs in fl.split_by_app_layer(records).items():
        cb_path = Path(args.codebooks) / f"{layer}.codebook.json" if args.codebooks else None
        if cb_path is not None and cb_path.exists():
            codebook = fl.Codebook.load(cb_path)
            raw = fl.encode_records(recs, codebook)
        else:
            codebook = fl.Codebook.iscx(window_size=args.window_size)
            raw = fl.encode_records(recs, codebook)
            fl.fit_minmax(raw, codebook)
            codebook.save(out / f"{layer}.codebook.json")
        X = fl.apply_minmax(codebook, raw)
        labels = [r.label for r in recs] if any(r.label is not None for r in recs) else None
        with open(out / f"{layer}.csv", "w", newline="") as fh:
            fl.write_features(fh, X, labels)
        print(f"{layer}: {len(recs)} flows -> {out / (layer + '.csv')}")


def cmd_experiment(args) -> None:
    if args.trees is None:
        args.trees = 50 if args.name == "occupancy" else 512
    seeds = range(args.seed, args.seed + args.runs)
    if args.name == "blindspot":
        rows = []
        for s in seeds:
            report = run_blind_spot_experiment(TorusConfig(seed=s), ForestParams(args.psi, args.trees, args.lmax, s),
                                               n_labeled=args.n_labeled, grid_step=args.grid_step)
            rows.extend({"seed": s, **r} for r in report.rows())
        _emit_table(rows, args.out)
    elif args.name == "contamination":
        counts = [int(c) for c in args.counts.split(",")]
        rows = []
        for s in seeds:
            res = run_contamination_sweep(TorusConfig(seed=s), counts, ForestParams(args.psi, args.trees, args.lmax, s),
                                          grid_step=args.grid_step)
            rows.extend({"seed": s, "count": c, "auc_red": a} for c, a in res.items())
        _emit_table(rows, args.out)
    else:
        psis = [int(p) for p in args.psis.split(",")]
        rows = []
        for s in seeds:
            X = occupancy_dataset(args.n_points, np.random.default_rng(s))
            res = measure_leaf_occupancy(X, psis, t=args.trees, seed=s)
            rows.extend({"seed": s, "factor": f, "psi": p, "mean_leaf_size": m}
                        for f, by_psi in res.items() for p, m in by_psi.items())
        _emit_table(rows, args.out)


def _emit_table(rows: list[dict], out) -> None:
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if out:
            fh.close()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hif", description="Hybrid isolation forest anomaly detection")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def forest_flags(sp, trees=512, psi=64):
        sp.add_argument("--psi", type=int, default=psi, help="subsample size per tree")
        sp.add_argument("--trees", type=int, default=trees, help=f"number of trees (default {trees})")
        sp.add_argument("--lmax", type=int, default=None, help="height limit (default ceil(1.1*log2(psi)))")
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("fit", help="build a forest on normal training data")
    sp.add_argument("train")
    sp.add_argument("--out", required=True)
    forest_flags(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("add-anomalies", help="insert labelled anomalies into a model")
    sp.add_argument("model")
    sp.add_argument("anomalies")
    sp.add_argument("--out", help="output model (default: overwrite input)")
    sp.set_defaults(func=cmd_add_anomalies)

    sp = sub.add_parser("score", help="score a dataset")
    sp.add_argument("model")
    sp.add_argument("data")
    sp.add_argument("--out", required=True)
    sp.add_argument("--alpha1", type=float, default=None)
    sp.add_argument("--alpha2", type=float, default=None)
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("eval", help="ROC/AUC of a labelled score file")
    sp.add_argument("scores")
    sp.add_argument("--column", default="score")
    sp.add_argument("--roc", help="write ROC points here")
    sp.add_argument("--hist", help="write per-label score histogram here")
    sp.add_argument("--bins", type=int, default=50)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gridsearch", help="choose alpha1/alpha2 on labelled data")
    sp.add_argument("model")
    sp.add_argument("data")
    sp.add_argument("--grid-step", type=float, default=0.05)
    sp.add_argument("--surface", help="write the full (alpha1, alpha2, auc) lattice here")
    sp.add_argument("--save", action="store_true", help="store the best alphas in the model")
    sp.set_defaults(func=cmd_gridsearch)

    sp = sub.add_parser("synth", help="generate the annulus benchmark files")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--n-train", type=int, default=1000)
    sp.add_argument("--n-test", type=int, default=1000)
    sp.add_argument("--n-per-cluster", type=int, default=1000)
    sp.add_argument("--n-labeled", type=int, default=5)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("flows", help="encode a flow file into per-application-layer feature files")
    sp.add_argument("flows")
    sp.add_argument("--out", required=True)
    sp.add_argument("--window-size", type=int, default=fl.DEFAULT_WINDOW_SIZE)
    sp.add_argument("--strict", action=argparse.BooleanOptionalAction, default=True,
                    help="fail on the first malformed row (--no-strict skips it)")
    sp.add_argument("--codebooks", help="directory of fitted <layer>.codebook.json files to reuse")
    sp.set_defaults(func=cmd_flows)

    sp = sub.add_parser("experiment", help="run a synthetic benchmark experiment")
    sp.add_argument("name", choices=["blindspot", "contamination", "occupancy"])
    forest_flags(sp, trees=None)
    sp.add_argument("--runs", type=int, default=10)
    sp.add_argument("--grid-step", type=float, default=0.05)
    sp.add_argument("--n-labeled", type=int, default=5)
    sp.add_argument("--counts", default="0,1,2,5,10")
    sp.add_argument("--psis", default="64,128,256,512,1024,2048,4096")
    sp.add_argument("--n-points", type=int, default=10000)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (CommandError, DatasetError, ModelFormatError, ForestError, MetricsError, fl.FlowFormatError,
            fl.UnknownCategoryError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
