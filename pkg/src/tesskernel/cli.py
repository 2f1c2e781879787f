"""Command-line front end.

    tesskernel generate --kind circle --m 50 --seed 1 -o circle.csv
    tesskernel train --data circle.csv --C-grid 0.1,1,10,100 -o model.json
    tesskernel predict --model model.json --data test.csv -o pred.csv
    tesskernel evaluate --model model.json --data test.csv
    tesskernel benchmark --data liver.csv --trials 30 --out-dir bench/
    tesskernel scaling-study --kind spiral --m-grid 50,100,200,400 --out-dir sweep/
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import DataError, Dataset, SplitSpec, generate_circle, generate_spiral, load_csv, train_test_split
from .kernel import NotPSDError, OutsideBoxError
from .persistence import ModelFileError, load_model, save_model
from .qp import classify, decision_function
from .train import METHODS, TrainConfig, accuracy, train_model

log = logging.getLogger("tesskernel")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

METHOD_LABELS = {
    "tessellated-saddle": "Tessellated",
    "mkl-gaussian-poly": "SimpleMKL",
    "mkl-random-tess": "SimpleMKL Tess.",
    "mkl-combined": "Combined",
    "fixed-kernel": "Fixed Tess.",
}


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _label_spec(text: str):
    try:
        return int(text)
    except ValueError:
        return text


def _add_learner_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=METHODS, default="tessellated-saddle")
    p.add_argument("--degree", "-d", type=int, default=1)
    p.add_argument("--C", type=float, default=1.0, help="box bound of the SVM dual")
    p.add_argument("--C-grid", type=_floats, default=None, help="comma-separated C values for cross-validation")
    p.add_argument("--folds", type=_positive_int, default=5)
    p.add_argument("--trace-bound", type=float, default=None, help="trace of P (default 2 x basis size)")
    p.add_argument("--R", type=_positive_int, default=300, help="random PSD basis size for MKL")
    p.add_argument("--max-outer-iter", type=_positive_int, default=400)
    p.add_argument("--seed", type=int, default=0)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        method=args.method,
        degree=args.degree,
        C=args.C,
        trace_bound=args.trace_bound,
        R=args.R,
        seed=args.seed,
        max_outer_iter=args.max_outer_iter,
    )


def _load(args, path) -> Dataset:
    return load_csv(path, label=args.label)


def cmd_generate(args) -> int:
    if args.kind == "circle":
        ds = generate_circle(args.m, noise=args.noise, seed=args.seed, radius=args.radius)
    else:
        ds = generate_spiral(args.m, noise=args.noise, turns=args.turns, seed=args.seed)
    ds.to_csv(args.output)
    print(f"wrote {ds.m} rows to {args.output}")
    return EXIT_OK


def cmd_train(args) -> int:
    ds = _load(args, args.data)
    cfg = _train_config(args)
    model, summary = train_model(ds, cfg, C_grid=args.C_grid, folds=args.folds)
    save_model(model, args.output)
    info = asdict(summary)
    info["model"] = str(args.output)
    info["training_accuracy"] = accuracy(model, ds.features, ds.labels)
    print(json.dumps(info, indent=1, default=float))
    if args.summary:
        Path(args.summary).write_text(json.dumps(info, indent=1, default=float))
    return EXIT_OK


def _model_data(args):
    model = load_model(args.model)
    ds = _load(args, args.data)
    n_model = model.scaling.offset.size if model.scaling is not None else model.points.shape[1]
    if ds.n != n_model:
        raise DataError(f"data has {ds.n} features, model expects {n_model}")
    return model, ds


def cmd_predict(args) -> int:
    model, ds = _model_data(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        f = decision_function(model, ds.features)
    labels = np.where(f >= 0, 1, -1)
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["row", "decision", "label"])
        for i, (fi, li) in enumerate(zip(f, labels)):
            w.writerow([i, repr(float(fi)), int(li)])
    finally:
        if args.output:
            out.close()
    return EXIT_OK


def tsa_score(predicted, labels) -> float:
    predicted = np.asarray(predicted).ravel()
    labels = np.asarray(labels).ravel()
    if labels.size == 0:
        raise DataError("empty test set")
    return float(np.mean(predicted == labels))


def cmd_evaluate(args) -> int:
    model, ds = _model_data(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tsa = tsa_score(classify(model, ds.features), ds.labels)
    print(f"TSA {tsa:.6f} ({ds.m} rows)")
    return EXIT_OK


@dataclass
class BenchmarkReport:
    records: list
    timings: list
    failures: list = field(default_factory=list)

    def stats(self) -> list[dict]:
        """Mean/std of accuracy and time per (dataset, method), from the raw records."""
        times = {(t["dataset"], t["method"], t["trial"]): t["seconds"] for t in self.timings}
        groups: dict = {}
        for r in self.records:
            groups.setdefault((r["dataset"], r["method"]), []).append(r)
        out = []
        for (dataset, method), recs in groups.items():
            acc = np.array([r["tsa"] for r in recs])
            tt = np.array([times.get((dataset, method, r["trial"]), np.nan) for r in recs])
            out.append(
                {
                    "dataset": dataset,
                    "method": method,
                    "accuracy_mean": float(acc.mean()),
                    "accuracy_std": float(acc.std()),
                    "time_mean": float(tt.mean()),
                    "time_std": float(tt.std()),
                    "m": recs[0]["m"],
                    "n": recs[0]["n"],
                    "trials": len(recs),
                }
            )
        return out

    def table(self) -> str:
        header = f"{'Data Set':<12}| {'Method':<16}| {'Accuracy':<16}| {'Time':<18}| Data Features"
        lines = [header, "-" * len(header)]
        last = None
        for i, s in enumerate(self.stats()):
            first = s["dataset"] != last
            last = s["dataset"]
            feats = f"m = {s['m']}, n = {s['n']}" if first else ""
            acc = f"{100 * s['accuracy_mean']:.2f} ± {100 * s['accuracy_std']:.2f}"
            tm = f"{s['time_mean']:.2f} ± {s['time_std']:.2f}"
            lines.append(f"{(s['dataset'] if first else ''):<12}| {METHOD_LABELS.get(s['method'], s['method']):<16}| {acc:<16}| {tm:<18}| {feats}")
        return "\n".join(lines)


RECORD_FIELDS = ["dataset", "method", "trial", "seed", "m", "n", "m_train", "m_test", "C", "tsa"]
TIMING_FIELDS = ["dataset", "method", "trial", "seconds"]


def _write_csv(path: Path, fields: Sequence[str], rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items() if k in fields})


def run_benchmark(datasets: dict, methods: Sequence[str], trials: int, base_cfg: TrainConfig, C_grid, folds: int, train_fraction: float, seed: int) -> BenchmarkReport:
    """Split, cross-validate, train and score every method on every dataset.

    Trial ``t`` uses seed ``seed + t`` for the split, the fold assignment and
    any random kernel basis.
    """
    report = BenchmarkReport([], [])
    for name, ds in datasets.items():
        for method in methods:
            for trial in range(1, trials + 1):
                trial_seed = seed + trial
                try:
                    train, test = train_test_split(ds, SplitSpec(train_fraction, seed=trial_seed))
                    cfg = TrainConfig(**{**asdict(base_cfg), "method": method, "seed": trial_seed})
                    t0 = time.perf_counter()
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore")
                        model, summary = train_model(train, cfg, C_grid=C_grid, folds=folds, cv_seed=trial_seed)
                        tsa = tsa_score(classify(model, test.features), test.labels)
                    elapsed = time.perf_counter() - t0
                except Exception as exc:  # noqa: BLE001 - a failed trial is recorded, the run continues
                    log.warning("%s/%s trial %d failed: %s", name, method, trial, exc)
                    report.failures.append({"dataset": name, "method": method, "trial": trial, "error": str(exc)})
                    continue
                report.records.append(
                    {
                        "dataset": name,
                        "method": method,
                        "trial": trial,
                        "seed": trial_seed,
                        "m": ds.m,
                        "n": ds.n,
                        "m_train": train.m,
                        "m_test": test.m,
                        "C": float(summary.C),
                        "tsa": tsa,
                    }
                )
                report.timings.append({"dataset": name, "method": method, "trial": trial, "seconds": elapsed})
                log.info("%s %s trial %d: TSA %.4f (%.2fs)", name, method, trial, tsa, elapsed)
    return report


def _benchmark_datasets(args) -> dict:
    datasets = {}
    for path in args.data or []:
        datasets[Path(path).stem] = load_csv(path, label=args.label)
    for spec in args.generated or []:
        kind, _, m = spec.partition(":")
        if kind not in ("circle", "spiral") or not m.isdigit():
            raise UsageError(f"--generated expects circle:M or spiral:M, got {spec!r}")
        gen = generate_circle if kind == "circle" else generate_spiral
        datasets[f"{kind}{m}"] = gen(int(m), seed=args.seed)
    if not datasets:
        raise UsageError("benchmark needs --data or --generated")
    return datasets


def cmd_benchmark(args) -> int:
    if args.C_grid is None:
        raise UsageError("benchmark needs --C-grid (C is chosen by cross-validation)")
    datasets = _benchmark_datasets(args)
    methods = args.methods or ["tessellated-saddle", "mkl-gaussian-poly", "mkl-random-tess", "mkl-combined"]
    report = run_benchmark(datasets, methods, args.trials, _train_config(args), args.C_grid, args.folds, args.train_fraction, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "records.csv", RECORD_FIELDS, report.records)
    _write_csv(out / "timings.csv", TIMING_FIELDS, report.timings)
    (out / "summary.json").write_text(json.dumps({"stats": report.stats(), "failures": report.failures}, indent=1))
    table = report.table()
    (out / "table.txt").write_text(table + "\n")
    print(table)
    if report.failures:
        print(f"{len(report.failures)} trial(s) failed; see summary.json", file=sys.stderr)
    return EXIT_OK


def run_scaling_study(kind: str, m_grid: Sequence[int], test_size: int, cfg: TrainConfig, C_grid, folds: int, seed: int, noise: float = 0.0) -> tuple[list, list]:
    """Residual error ``1 - TSA`` against training size on a fixed test set."""
    gen = generate_circle if kind == "circle" else generate_spiral
    test = gen(test_size, noise=noise, seed=seed + 10_000)
    records, timings = [], []
    for m in m_grid:
        train = gen(int(m), noise=noise, seed=seed + int(m))
        t0 = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model, summary = train_model(train, cfg, C_grid=C_grid, folds=folds, cv_seed=seed)
            tsa = tsa_score(classify(model, test.features), test.labels)
        elapsed = time.perf_counter() - t0
        records.append({"kind": kind, "method": cfg.method, "m": int(m), "C": float(summary.C), "tsa": tsa, "residual": 1.0 - tsa})
        timings.append({"kind": kind, "method": cfg.method, "m": int(m), "seconds": elapsed})
        log.info("m=%d TSA %.4f residual %.4f (%.2fs)", m, tsa, 1.0 - tsa, elapsed)
    return records, timings


def cmd_scaling_study(args) -> int:
    cfg = _train_config(args)
    records, timings = run_scaling_study(args.kind, args.m_grid, args.test_size, cfg, args.C_grid, args.folds, args.seed, args.noise)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "records.csv", ["kind", "method", "m", "C", "tsa", "residual"], records)
    _write_csv(out / "timings.csv", ["kind", "method", "m", "seconds"], timings)
    print(f"{'m':>6} {'TSA':>8} {'residual':>9} {'seconds':>8}")
    for r, t in zip(records, timings):
        print(f"{r['m']:>6} {r['tsa']:>8.4f} {r['residual']:>9.4f} {t['seconds']:>8.2f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tesskernel", description="Tessellated-kernel SVM learning")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic circle or spiral dataset")
    p.add_argument("--kind", choices=("circle", "spiral"), required=True)
    p.add_argument("--m", type=_positive_int, required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--turns", type=float, default=1.25)
    p.add_argument("--radius", type=float, default=0.75)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="learn a kernel and SVM from a CSV file")
    p.add_argument("--data", required=True)
    p.add_argument("--label", type=_label_spec, default=-1, help="label column name or index (default: last)")
    p.add_argument("--output", "-o", required=True, help="model file to write")
    p.add_argument("--summary", help="also write the training summary JSON here")
    _add_learner_args(p)
    p.set_defaults(func=cmd_train)

    for name, func, text in (("predict", cmd_predict, "decision values and labels"), ("evaluate", cmd_evaluate, "test set accuracy")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--model", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--label", type=_label_spec, default=-1)
        if name == "predict":
            p.add_argument("--output", "-o")
        p.set_defaults(func=func)

    p = sub.add_parser("benchmark", help="repeated split / CV / train / test protocol")
    p.add_argument("--data", action="append", help="CSV dataset (repeatable)")
    p.add_argument("--generated", action="append", help="synthetic dataset circle:M or spiral:M (repeatable)")
    p.add_argument("--label", type=_label_spec, default=-1)
    p.add_argument("--methods", type=lambda s: [v for v in s.split(",") if v], default=None)
    p.add_argument("--trials", type=_positive_int, default=30)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--out-dir", required=True)
    _add_learner_args(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("scaling-study", help="residual error versus training size")
    p.add_argument("--kind", choices=("circle", "spiral"), default="spiral")
    p.add_argument("--m-grid", type=_ints, default=[50, 100, 200, 400])
    p.add_argument("--test-size", type=_positive_int, default=500)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--out-dir", required=True)
    _add_learner_args(p)
    p.set_defaults(func=cmd_scaling_study)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "methods", None):
        bad = [m for m in args.methods if m not in METHODS]
        if bad:
            print(f"error: unknown method(s) {', '.join(bad)}", file=sys.stderr)
            return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, DataError, ModelFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NotPSDError, OutsideBoxError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
