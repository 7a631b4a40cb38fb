"""Command line for mobclust.

Every subcommand accepts ``--config PATH`` (INI, see :mod:`mobclust.io`) and
repeatable ``--set section.key=value`` overrides.  Results are printed to
stdout as one JSON object; failures print one JSON object
``{"error": ..., "message": ...}`` to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io, plotting
from .baselines import km_dtw, kmeans
from .ensemble import interpret
from .metrics import best_matching, elbow_select, nmi
from .preprocess import (build_dataset, read_plt, read_poi_csv, sum_vectors,
                         write_type_dictionary)
from .synth import generate_synthetic
from .trainer import TrainingError, train

log = logging.getLogger("mobclust")

EXIT_INPUT = 2
EXIT_TRAINING = 3

SEQUENCES = "sequences.txt"


class CliError(Exception):
    def __init__(self, message: str, kind: str = "input", code: int = EXIT_INPUT):
        super().__init__(message)
        self.kind = kind
        self.code = code


def _config(args) -> io.RunConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise CliError(f"--set expects section.key=value, got {item!r}", "config")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value
    return io.load_config(args.config, overrides)


def _sequence_path(data) -> Path:
    p = Path(data)
    return p / SEQUENCES if p.is_dir() else p


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _evaluation(pred, truth) -> dict:
    m = best_matching(pred, truth)
    return {"acc": m.accuracy, "nmi": nmi(pred, truth),
            "contingency": m.table.tolist(),
            "matching": [{"cluster": c, "label": t} for c, t in m.pairs]}


def _aligned_labels(path, ids) -> np.ndarray:
    lab_ids, labels = io.read_labels(path)
    if len(lab_ids) != len(ids):
        raise CliError(f"label count mismatch: {len(ids)} predictions but {len(lab_ids)} labels "
                       f"in {path}", "mismatch")
    if list(lab_ids) != list(ids):
        pos = {i: k for k, i in enumerate(lab_ids)}
        missing = [i for i in ids if i not in pos]
        if missing:
            raise CliError(f"{len(missing)} ids have no label in {path}, e.g. {missing[0]!r}",
                           "mismatch")
        labels = labels[[pos[i] for i in ids]]
    return labels


# -- subcommands --------------------------------------------------------------

def cmd_preprocess(args) -> dict:
    cfg = _config(args)
    root = Path(args.trajectories)
    files = sorted(root.rglob("*.plt")) if root.is_dir() else [root]
    if not files or not files[0].exists():
        raise CliError(f"no .plt files found under {root}")
    trajs = {}
    for f in files:
        tid = f.relative_to(root).with_suffix("").as_posix() if root.is_dir() else f.stem
        trajs[tid] = read_plt(f)
    poi, vocab = read_poi_csv(args.pois)
    p = cfg.preprocess
    ids, seqs = build_dataset(trajs, poi, p.duration_s, p.radius_m, p.context_radius_m, p.min_length)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_type_dictionary(out / "types.tsv", vocab)
    io.write_config(out / "config.ini", cfg)
    if not seqs:
        raise CliError(f"no trajectory has at least {p.min_length} stay points", "empty")
    io.write_sequences(out / SEQUENCES, ids, seqs)
    io.write_matrix(out / "sums.csv", ids, sum_vectors(seqs), prefix="t")
    return {"trajectories": len(trajs), "kept": len(ids), "dropped": len(trajs) - len(ids),
            "n_types": poi.n_types, "out": str(out)}


def cmd_synth(args) -> dict:
    cfg = _config(args)
    seqs, labels = generate_synthetic(cfg.synth, args.seed)
    ids = [f"s{i:05d}" for i in range(len(seqs))]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_sequences(out / SEQUENCES, ids, seqs)
    io.write_matrix(out / "sums.csv", ids, sum_vectors(seqs), prefix="t")
    io.write_labels(out / "labels.csv", ids, labels)
    io.write_config(out / "config.ini", cfg)
    return {"n": len(ids), "n_clusters": cfg.synth.n_clusters, "seed": args.seed, "out": str(out)}


def cmd_train(args) -> dict:
    cfg = _config(args)
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.k is not None:
        cfg.model.n_clusters = args.k
    ids, seqs = io.read_sequences(_sequence_path(args.data))
    X = sum_vectors(seqs)
    try:
        result = train(X, cfg.train, cfg.model_config(X.shape[1]))
    except TrainingError as exc:
        raise CliError(str(exc), "training", EXIT_TRAINING) from None
    run = io.write_run(args.out, result, cfg, ids, _sequence_path(args.data))
    plotting.plot_loss(result.log, run / "loss.png", result.converge_epoch)
    return {"run": str(run), "n": result.converge_epoch, "max_epoch": result.max_epoch,
            "converged": result.converged, "final_loss": result.log[-1]["total"]}


def cmd_cluster(args) -> dict:
    run = io.read_run(args.run)
    q = args.quantile if args.quantile is not None else run.config.ensemble.quantile
    res = interpret(run.Q, q)
    out = Path(args.out) if args.out else run.path
    out.mkdir(parents=True, exist_ok=True)
    io.write_ensemble(out / "ensemble.csv", run.ids, res)
    io.write_matrix(out / "qbar.csv", run.ids, res.q_bar, prefix="q")
    return {"ensemble": str(out / "ensemble.csv"), "epochs": [int(run.epochs[0]), int(run.epochs[-1])],
            "cluster_sizes": np.bincount(res.membership, minlength=run.Q.shape[2]).tolist(),
            "flagged": int(res.boundary.sum()), "threshold": res.threshold}


def cmd_evaluate(args) -> dict:
    ids, pred = io.read_labels(args.pred, "cluster")
    truth = _aligned_labels(args.labels, ids)
    report = _evaluation(pred, truth)
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def cmd_reliability(args) -> dict:
    run = io.read_run(args.run)
    q = args.quantile if args.quantile is not None else run.config.ensemble.quantile
    res = interpret(run.Q, q)
    out = Path(args.out) if args.out else run.path
    out.mkdir(parents=True, exist_ok=True)
    report = {"n": len(run.ids), "quantile": q, "threshold": res.threshold,
              "flagged": int(res.boundary.sum()),
              "mean_reliability": float(res.reliability.mean()),
              "mean_confidence": float(res.confidence.mean()),
              "mean_variability": float(res.variability.mean())}
    correct = None
    if args.labels:
        truth = _aligned_labels(args.labels, run.ids)
        mapping = dict(best_matching(res.membership, truth).pairs)
        correct = np.array([mapping.get(int(c), -1) == t for c, t in zip(res.membership, truth)])
        wrong = ~correct
        report.update({
            "misassigned": int(wrong.sum()),
            "mean_reliability_correct": float(res.reliability[correct].mean()) if correct.any() else None,
            "mean_reliability_misassigned": float(res.reliability[wrong].mean()) if wrong.any() else None,
            "misassigned_flagged_fraction": float(res.boundary[wrong].mean()) if wrong.any() else None,
        })
    io.write_ensemble(out / "ensemble.csv", run.ids, res)
    plotting.plot_reliability(res.confidence, res.variability, res.boundary,
                              out / "reliability.png", correct)
    (out / "reliability.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def cmd_baseline(args) -> dict:
    cfg = _config(args)
    k = args.k if args.k is not None else cfg.model.n_clusters
    ids, seqs = io.read_sequences(_sequence_path(args.data))
    if args.method == "sum-kmeans":
        pred = kmeans(sum_vectors(seqs), k, restarts=args.restarts, seed=args.seed).assignments
    else:
        pred = km_dtw(seqs, k, seed=args.seed, restarts=args.restarts).assignments
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_labels(out / "assignments.csv", ids, pred, column="cluster")
    report = {"method": args.method, "k": k, "assignments": str(out / "assignments.csv")}
    if args.labels:
        report.update(_evaluation(pred, _aligned_labels(args.labels, ids)))
        (out / "evaluation.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def cmd_elbow(args) -> dict:
    cfg = _config(args)
    e = cfg.elbow
    k_min = args.k_min if args.k_min is not None else e.k_min
    k_max = args.k_max if args.k_max is not None else e.k_max
    if k_min > k_max:
        raise CliError(f"k_min {k_min} exceeds k_max {k_max}", "config")
    _, seqs = io.read_sequences(_sequence_path(args.data))
    res = elbow_select(sum_vectors(seqs), range(k_min, k_max + 1), restarts=e.restarts,
                       seed=args.seed, flat_tol=e.flat_tol)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_table(out / "elbow.csv", ["k", "sse", "curvature"],
                   ([k, s, res.curvature.get(k, float("nan"))] for k, s in zip(res.ks, res.sse)))
    plotting.plot_elbow(res, out / "elbow.png")
    return {"k": res.k, "flat": res.flat, "ks": res.ks, "sse": res.sse}


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mobclust", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override one config value (repeatable)")
        p.set_defaults(func=func)
        return p

    p = add("preprocess", cmd_preprocess, "GPS logs + POIs -> context sequences")
    p.add_argument("--trajectories", required=True, help=".plt file or directory searched recursively")
    p.add_argument("--pois", required=True, help="POI CSV with header lat,lon,type")
    p.add_argument("--out", required=True)

    p = add("synth", cmd_synth, "generate labeled synthetic sequences")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = add("train", cmd_train, "train the clustering model into a run directory")
    p.add_argument("--data", required=True, help="sequence file or directory holding sequences.txt")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)

    p = add("cluster", cmd_cluster, "ensemble assignments from a run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--out", help="output directory (default: the run directory)")
    p.add_argument("--quantile", type=float)

    p = add("evaluate", cmd_evaluate, "accuracy and NMI against labels")
    p.add_argument("--pred", required=True, help="CSV with id and cluster columns")
    p.add_argument("--labels", required=True, help="CSV with id,label")
    p.add_argument("--out", help="also write the JSON report here")

    p = add("reliability", cmd_reliability, "confidence, variability, reliability and boundary flags")
    p.add_argument("--run", required=True)
    p.add_argument("--labels", help="optional ground truth for a correctness breakdown")
    p.add_argument("--out")
    p.add_argument("--quantile", type=float)

    p = add("baseline", cmd_baseline, "SUM+K-means or K-medoids over DTW")
    p.add_argument("--method", required=True, choices=("sum-kmeans", "km-dtw"))
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--labels")

    p = add("elbow", cmd_elbow, "choose K from the SSE curve")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k-min", type=int)
    p.add_argument("--k-max", type=int)
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    # accept path objects and numbers when called from Python
    args = parser.parse_args(None if argv is None else [str(a) for a in argv])
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        payload = args.func(args)
    except CliError as exc:
        err = {"error": exc.kind, "message": str(exc)}
        code = exc.code
    except io.FormatError as exc:
        err = {"error": "format", "message": str(exc), "path": exc.path, "line": exc.line}
        code = EXIT_INPUT
    except (ValueError, OSError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        code = EXIT_INPUT
    else:
        _emit(payload)
        return 0
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
