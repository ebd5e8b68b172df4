"""Command-line entry point: ``grove {simulate,train,predict,knn,experiment}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from .baselines import InsufficientDataError, knn_batch
from .core import (ConfigError, DataError, ForestConfig, Mode, load_config, load_dataset,
                   read_points, save_dataset)
from .forest import TrainingError, forest_average, load_forest, save_forest, train
from .harness import TABLES, run_experiment, run_metadata
from .inference import check_forest, interval_variance, z_value
from .sampling import derive_stream
from .simgen import DESIGNS, get_design, generate

log = logging.getLogger("grove")

_USER_ERRORS = (ConfigError, DataError, TrainingError, InsufficientDataError,
                ValueError, FileNotFoundError)


def _write_predictions(path, pts, est, var, level, method=None):
    z = z_value(level)
    half = z * np.sqrt(var)
    d = pts.shape[1]
    header = [f"x{j + 1}" for j in range(d)] + ["estimate", "variance", "ci_low", "ci_high"]
    if method is not None:
        header.append("method")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for x, e, v, h in zip(pts.tolist(), est.tolist(), var.tolist(), half.tolist()):
            row = [repr(c) for c in x] + [repr(e), repr(v), repr(e - h), repr(e + h)]
            if method is not None:
                row.append(method)
            writer.writerow(row)


def cmd_simulate(args) -> None:
    design = get_design(args.design, args.d, args.q)
    data = generate(design, args.n, derive_stream(args.seed, 0))
    save_dataset(data, args.out)
    pts = derive_stream(args.seed, 1).random((args.test_points, args.d))
    sidecar = {
        **design.params(), "n": args.n, "seed": args.seed,
        "test_points": pts.tolist(),
        "true_tau": design.true_tau(pts).tolist(),
    }
    side = Path(args.out).with_suffix(".json")
    with open(side, "w") as fh:
        json.dump(sidecar, fh, indent=1)
    log.info("wrote %d rows to %s and design metadata to %s", args.n, args.out, side)


def _train_config(args) -> ForestConfig:
    cfg = load_config(args.config) if args.config else ForestConfig()
    overrides = {
        "mode": args.mode, "num_trees": args.trees, "subsample_size": args.subsample,
        "min_leaf": args.min_leaf, "alpha": args.alpha, "pi": args.pi, "seed": args.seed,
    }
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def cmd_train(args) -> None:
    cfg = _train_config(args)
    data = load_dataset(args.data, expect_treatment=cfg.mode.needs_treatment)
    t0 = time.perf_counter()
    forest = train(data, cfg, n_jobs=args.jobs)
    save_forest(forest, args.model_out)
    log.info("trained %d trees on %d rows in %.1fs -> %s", forest.num_trees, data.n,
             time.perf_counter() - t0, args.model_out)


def cmd_predict(args) -> None:
    forest = load_forest(args.model)
    pts = read_points(args.points)
    if pts.shape[1] != forest.d:
        raise DataError(f"points have {pts.shape[1]} features, model expects {forest.d}")
    check_forest(forest)
    P = forest.tree_predictions(pts)
    est = forest_average(P)
    var = interval_variance(forest, P, calibrate=not args.no_calibrate)
    _write_predictions(args.out, pts, est, var, args.ci_level)


def cmd_knn(args) -> None:
    data = load_dataset(args.data, expect_treatment=True)
    pts = read_points(args.points)
    if pts.shape[1] != data.d:
        raise DataError(f"points have {pts.shape[1]} features, data has {data.d}")
    est, var = knn_batch(data, pts, args.k)
    _write_predictions(args.out, pts, est, var, args.ci_level, method=f"knn-{args.k}")


def cmd_experiment(args) -> None:
    meta = run_experiment(args.table, args.scale, args.seed, args.out, args.workers)
    log.info("%s done in %.1fs: %s", args.table, meta["seconds"], meta["summary"])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grove", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a synthetic dataset")
    s.add_argument("--design", required=True, choices=DESIGNS)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--q", type=int, help="signal dimensions (dense design)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--test-points", type=int, default=100)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="grow a forest and save it as JSON")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="JSON with ForestConfig fields; flags override it")
    t.add_argument("--mode", choices=[m.value for m in Mode if m is not Mode.TRIVIAL])
    t.add_argument("--trees", type=int)
    t.add_argument("--subsample", type=int)
    t.add_argument("--min-leaf", type=int)
    t.add_argument("--alpha", type=float)
    t.add_argument("--pi", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--jobs", type=int, default=1)
    t.add_argument("--model-out", required=True)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("predict", help="estimates with confidence intervals")
    r.add_argument("--model", required=True)
    r.add_argument("--points", required=True)
    r.add_argument("--ci-level", type=float, default=0.95)
    r.add_argument("--no-calibrate", action="store_true",
                   help="skip the empirical-Bayes smoothing of variance estimates")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_predict)

    k = sub.add_parser("knn", help="k-NN matching estimates with intervals")
    k.add_argument("--data", required=True)
    k.add_argument("--points", required=True)
    k.add_argument("--k", type=int, default=10)
    k.add_argument("--ci-level", type=float, default=0.95)
    k.add_argument("--out", required=True)
    k.set_defaults(func=cmd_knn)

    e = sub.add_parser("experiment", help="run a simulation table")
    e.add_argument("--table", required=True, choices=TABLES)
    e.add_argument("--scale", type=float, default=1.0)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("default")
            args.func(args)
    except _USER_ERRORS as exc:
        print(f"grove {args.command}: error: {exc}", file=sys.stderr)
        return 2
    finally:
        for w in caught:
            print(f"grove {args.command}: warning: {w.message}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
