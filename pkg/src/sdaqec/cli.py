"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .config import ConfigError, RunConfig, load_config
from .data_io import (
    DataError, Dataset, class_distribution, export_features, import_features, is_feature_file,
    load_dataset, load_manifest, save_image, stratified_indices, stratified_split, write_manifest,
)
from .diffusion import augment_minority
from .quantum import describe_circuit
from .trainer import HybridModel, TrainingDiverged, fit, load_checkpoint, train

log = logging.getLogger("sdaqec")

REPORT_METRICS = ["accuracy", "precision", "recall", "sensitivity", "specificity", "f1", "auc"]
VIOLIN_METRICS = ["accuracy", "auc", "f1"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.apply_seed(args.seed)
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if getattr(args, "no_diffusion", False):
        cfg.train.use_diffusion = False
    if getattr(args, "no_quantum", False):
        cfg.train.use_quantum = False
        cfg.model.use_quantum = False
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.json")
    return out


def cmd_analyze(args):
    d = load_dataset(args.data, tuple(args.size))
    counts = d.class_counts
    _, _, ratio, minority = class_distribution(d)
    print(f"class 0: {counts[0]}, class 1: {counts[1]}, ratio {ratio:.2f}")
    print(f"minority label: {minority}")


def cmd_augment(args):
    cfg = _resolve(args)
    out = _out_dir(cfg)
    d = load_dataset(args.data, cfg.data.target_size)
    aug = augment_minority(d, cfg.augment)
    synth = [s for s in aug.samples if s.origin == "synthetic"]
    syn_dir = out / "synthetic"
    with open(out / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["file", "label", "source_id", "t", "gamma"])
        for s in synth:
            name = f"{s.label}/syn_{s.meta['index']:05d}.png"
            (syn_dir / str(s.label)).mkdir(parents=True, exist_ok=True)
            save_image(syn_dir / name, s.image)
            w.writerow([name, s.label, s.source_id, s.meta["t"], repr(s.meta["gamma"])])
    print(f"wrote {len(synth)} synthetic samples to {syn_dir}")


def cmd_train(args):
    cfg = _resolve(args)
    out = _out_dir(cfg)
    dc = cfg.data
    if dc.features:
        x, y = import_features(dc.features)
        tr, va, te = stratified_indices(y, dc.split, cfg.seed)
        cfg.model.input_dim = x.shape[1]
        if cfg.train.use_diffusion:
            log.warning("diffusion augmentation applies to images; skipped for feature input")
        model = HybridModel(cfg.model, seed=cfg.seed)
        hist = fit(model, x[tr], y[tr], x[va], y[va], cfg.train, out)
        export_features(out / "test_features.csv", x[te], y[te])
    else:
        if dc.root:
            full = load_dataset(dc.root, dc.target_size)
            tr_ds, va_ds, te_ds = stratified_split(full, dc.split, cfg.seed)
            write_manifest(out / "test_manifest.csv", te_ds)
        elif dc.train_root:
            tr_ds = load_dataset(dc.train_root, dc.target_size)
            va_ds = load_dataset(dc.val_root, dc.target_size)
        else:
            raise ConfigError("config sets no data source (data.root, data.train_root or data.features)")
        model, hist, aug_ds = train(tr_ds, va_ds, cfg.train, cfg.augment, cfg.model, out)
        synth = [s for s in aug_ds.samples if s.origin == "synthetic"]
        if len(synth) > 1:
            real = [s for s in aug_ds.samples if s.origin == "real" and s.label == synth[0].label]
            xr, _ = Dataset(real).arrays()
            xs, _ = Dataset(synth).arrays()
            fd = ev.feature_frechet(model.embed(xr), model.embed(xs))
            (out / "fd_ext.json").write_text(json.dumps({"FD-ext": fd, "n_real": len(real), "n_synthetic": len(synth)}, indent=2) + "\n")
    print(f"best epoch {hist.best_epoch}, {hist.stop_reason}; checkpoints in {out}")


def _load_eval_data(path, model):
    path = Path(path)
    if path.is_dir():
        d = load_dataset(path, model.cfg.extractor.input[1:])
        return d.arrays()
    if is_feature_file(path):
        return import_features(path)
    return load_manifest(path, model.cfg.extractor.input[1:]).arrays()


def _roc_band(scores, labels, n, seed, grid):
    """Pointwise 2.5/97.5 percentiles of bootstrap TPR on an FPR grid."""
    rng = np.random.default_rng([seed, 7])
    rows = []
    for _ in range(n):
        idx = rng.integers(0, len(labels), len(labels))
        if labels[idx].min() == labels[idx].max():
            continue
        fpr, tpr, _ = ev.roc_curve(scores[idx], labels[idx])
        rows.append(np.interp(grid, fpr, tpr))
    rows = np.array(rows)
    return np.percentile(rows, 2.5, axis=0), np.percentile(rows, 97.5, axis=0)


def cmd_eval(args):
    from . import plotting
    model = load_checkpoint(args.model)
    x, y = _load_eval_data(args.data, model)
    out = Path(args.out or Path(args.model).parent / "eval")
    out.mkdir(parents=True, exist_ok=True)
    scores = model.predict_proba(x)[:, 1]
    preds = (scores >= 0.5).astype(int)
    cm, ms = ev.evaluate(scores, y)
    point = ms.as_dict()
    report = {"model": args.name, "n_samples": int(len(y)), "confusion": {
        "tp": cm.tp, "fp": cm.fp, "tn": cm.tn, "fn": cm.fn, "rows_true_cols_pred": cm.as_rows()},
        "metrics": point, "undefined": ms.undefined, "bootstrap": {"n": args.n_boot, "seed": args.seed}}
    boots = {}
    for metric in REPORT_METRICS:
        b = ev.bootstrap(scores, preds, y, metric, args.n_boot, args.seed)
        boots[metric] = b
        report["bootstrap"][metric] = {"mean": b.mean, "std": b.std, "ci95": list(b.ci95), "skipped": b.skipped}
    (out / "metrics.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    fpr, tpr, thr = ev.roc_curve(scores, y)
    with open(out / "roc.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "fpr", "tpr"])
        for t, a, b in zip(thr, fpr, tpr):
            w.writerow([repr(float(t)), repr(float(a)), repr(float(b))])
    violin = {}
    for metric in VIOLIN_METRICS:
        b = ev.bootstrap(scores, preds, y, metric, args.n_violin, args.seed)
        violin[metric] = b.samples
        with open(out / f"bootstrap_{metric}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([metric])
            w.writerows([[repr(float(v))] for v in b.samples])
    grid = np.linspace(0, 1, 101)
    lo, hi = _roc_band(scores, y, args.n_boot, args.seed, grid)
    plotting.roc_figure(out / "roc.svg", fpr, tpr, ms.auc, (grid, lo, hi), args.name)
    names = [m for m in REPORT_METRICS if m != "sensitivity"]
    plotting.metric_bars(out / "bars.svg", names, [point[m] for m in names],
                         [boots[m].ci95[0] for m in names], [boots[m].ci95[1] for m in names])
    plotting.violin(out / "violin.svg", violin)
    print(" ".join(f"{m}={point[m]:.4f}" for m in REPORT_METRICS))
    print(f"reports in {out}")


def cmd_compare(args):
    from . import plotting
    reports = []
    for p in args.metrics:
        doc = json.loads(Path(p).read_text())
        name = doc.get("model") or Path(p).parent.name
        reports.append((name, doc))
    names = [n for n, _ in reports]
    if len(set(names)) != len(names):
        names = [f"{n}#{i}" for i, n in enumerate(names)]
    if args.baseline is not None:
        if args.baseline not in names:
            raise UsageError(f"baseline {args.baseline!r} is not among {names}")
        base_i = names.index(args.baseline)
    else:
        base_i = int(np.argmin([d["metrics"]["accuracy"] for _, d in reports]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    matrix = np.array([[d["metrics"][m] for m in REPORT_METRICS] for _, d in reports])
    with open(out / "heatmap.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model"] + REPORT_METRICS)
        for n, row in zip(names, matrix):
            w.writerow([n] + [repr(float(v)) for v in row])
    with open(out / "space3d.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "accuracy", "auc", "f1", "accuracy_std", "auc_std", "f1_std"])
        for n, (_, d) in zip(names, reports):
            m, b = d["metrics"], d.get("bootstrap", {})
            stds = [b.get(k, {}).get("std", "") for k in ("accuracy", "auc", "f1")]
            w.writerow([n, m["accuracy"], m["auc"], m["f1"]] + stds)
    others = [i for i in range(len(names)) if i != base_i]
    table = []
    with open(out / "improvement.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "baseline"] + [f"{m}_pct" for m in REPORT_METRICS])
        for i in others:
            row = []
            for j in range(len(REPORT_METRICS)):
                base = matrix[base_i, j]
                row.append(ev.relative_improvement(matrix[i, j], base) if base > 0 else float("nan"))
            table.append(row)
            w.writerow([names[i], names[base_i]] + [f"{v:.2f}" for v in row])
    plotting.heatmap(out / "heatmap.svg", names, REPORT_METRICS, matrix)
    if others:
        plotting.improvement_bars(out / "improvement.svg", [names[i] for i in others], REPORT_METRICS, table)
    print(f"baseline: {names[base_i]}")
    for i, row in zip(others, table):
        print(f"{names[i]}: " + ", ".join(f"{m} {v:+.1f}%" for m, v in zip(REPORT_METRICS, row)))


def cmd_describe(args):
    cfg = _resolve(args)
    thetas = None
    if args.model:
        model = load_checkpoint(args.model)
        if model.quantum is None:
            raise ConfigError("checkpoint has no quantum layer")
        thetas = model.quantum.params["q.thetas"].data
        n_q, n_l = model.quantum.n_qubits, model.quantum.n_layers
    else:
        n_q, n_l = cfg.model.n_qubits, cfg.model.n_layers
    enc = cfg.model.reduced_dim or cfg.model.input_dim
    print(f"amplitude encoding: {enc} features -> {int(np.log2(enc))} qubits")
    for line in describe_circuit(n_q, n_l, thetas):
        print(line)
    print(f"parameters: {n_q * n_l} circuit + {2 * n_q + 2} head = {n_q * n_l + 2 * n_q + 2}")


def cmd_synth(args):
    from .synthetic import make_corpus, write_corpus
    d = make_corpus(args.n0, args.n1, args.size, args.seed, args.prefix)
    write_corpus(args.out, d)
    print(f"wrote {len(d)} images to {args.out}")


def build_parser():
    p = _Parser(prog="sdaqec", description="Diffusion-augmented quantum-head classifier")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    a = sub.add_parser("analyze", help="print the class distribution of a corpus")
    a.add_argument("data")
    a.add_argument("--size", type=int, nargs=2, default=[64, 64], metavar=("H", "W"))
    a.set_defaults(func=cmd_analyze)

    a = sub.add_parser("augment", help="write synthetic minority samples and a manifest")
    a.add_argument("data")
    a.add_argument("--config")
    a.add_argument("--seed", type=int)
    a.add_argument("--out")
    a.set_defaults(func=cmd_augment)

    a = sub.add_parser("train", help="train and write checkpoints and history")
    a.add_argument("--config", required=True)
    a.add_argument("--seed", type=int)
    a.add_argument("--out")
    a.add_argument("--no-diffusion", action="store_true")
    a.add_argument("--no-quantum", action="store_true")
    a.set_defaults(func=cmd_train)

    a = sub.add_parser("eval", help="write metrics, ROC and bootstrap reports")
    a.add_argument("--model", required=True)
    a.add_argument("--data", required=True, help="class directory, path,label manifest or feature CSV")
    a.add_argument("--out")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--name", default="model")
    a.add_argument("--n-boot", type=int, default=500)
    a.add_argument("--n-violin", type=int, default=300)
    a.set_defaults(func=cmd_eval)

    a = sub.add_parser("compare", help="relative improvement and heatmap tables from metrics.json files")
    a.add_argument("metrics", nargs="+")
    a.add_argument("--out", default="compare")
    a.add_argument("--baseline")
    a.set_defaults(func=cmd_compare)

    a = sub.add_parser("describe-circuit", help="print the gate sequence")
    a.add_argument("--config")
    a.add_argument("--model")
    a.set_defaults(func=cmd_describe)

    a = sub.add_parser("synth", help="generate a seeded two-class texture corpus")
    a.add_argument("out")
    a.add_argument("--n0", type=int, default=300)
    a.add_argument("--n1", type=int, default=60)
    a.add_argument("--size", type=int, default=64)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--prefix", default="img")
    a.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ConfigError, DataError, TrainingDiverged, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
