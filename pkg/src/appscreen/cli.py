"""Command-line pipeline: synth, featurize, select, evaluate, stack-evaluate,
explain and report, each reading its predecessors' artifacts from disk.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 internal
assertion (including detected leakage).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from .cohort import SynthConfig, classes, load_labels, null_generate, synth_generate
from .errors import AppScreenError, ConfigError, DataError, PipelineAssertion
from .explain import (ShapExplanation, exact_shapley, export_force, export_summary, force_svg, summary_json,
                      summary_svg)
from .features import CohortFeatures, apply_scaler, cohort_features, fit_scaler
from .ingest import CohortManifest, build_intervals, load_catalog, parse_events
from .learn.cv import EvalReport, FSConfig, StackSpec, nested_lopocv
from .learn.models import ModelSpec, fit
from .select import run_selection, threshold_sweep
from .sessions import SESSION_GAP_MS, session_table

FS_PARAM_FLAGS = {
    "ig": ("k", "bins"),
    "stable": ("threshold", "n_boot", "penalty_ratio"),
    "rf": ("k", "n_estimators", "max_depth"),
    "boruta": ("max_depth", "max_iter", "alpha"),
    "none": (),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _existing(path: str | None, what: str) -> Path:
    if path is None:
        raise ConfigError(f"missing required path: {what}")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _labels(path) -> dict[str, int]:
    return classes(load_labels(_existing(path, "labels").read_text()))


def _features(path) -> CohortFeatures:
    return CohortFeatures.load(_existing(path, "features"))


# ---------------------------------------------------------------- argument definitions

def _add_fs_args(p):
    p.add_argument("--fs", choices=sorted(FS_PARAM_FLAGS), default="stable", help="feature-selection method")
    p.add_argument("--threshold", type=float, default=0.77, help="stability-selection frequency threshold")
    p.add_argument("--n-boot", type=int, default=1000, help="stability-selection subsamples")
    p.add_argument("--penalty-ratio", type=float, default=0.16,
                   help="L1 penalty as a fraction of the all-zero penalty (stability selection)")
    p.add_argument("--k", type=int, default=5, help="features kept by ig / rf ranking")
    p.add_argument("--bins", type=int, default=10, help="equal-frequency bins for information gain")
    p.add_argument("--n-estimators", type=int, default=100, help="trees for rf ranking")
    p.add_argument("--max-depth", type=int, default=None, help="tree depth for rf ranking / Boruta (default 5)")
    p.add_argument("--max-iter", type=int, default=100, help="Boruta iterations")
    p.add_argument("--alpha", type=float, default=0.05, help="Boruta test level")


def _fs_config(args) -> FSConfig:
    params = {}
    for name in FS_PARAM_FLAGS[args.fs]:
        value = getattr(args, name)
        if name == "max_depth" and value is None:
            value = 5 if args.fs == "boruta" else None
        params[name] = value
    return FSConfig(args.fs, params)


def _add_data_args(p):
    p.add_argument("--features", help="features.npz written by featurize")
    p.add_argument("--labels", help="labels CSV (participant_id,i1..i9)")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="appscreen", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    subs = {}

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON file of option values; command-line flags take precedence")
        p.add_argument("--threads", type=int, default=None, help="parallel workers (default: available cores)")
        subs[name] = p
        return p

    p = add("synth", "Generate a seeded synthetic cohort (events, manifest, catalog, labels).")
    p.add_argument("--seed", type=int, required=False, help="generator seed (required)")
    p.add_argument("--n", type=int, default=100, help="participants")
    p.add_argument("--mode", choices=("planted", "null"), default="planted", help="planted effects or label-free null")
    p.add_argument("--depressed-fraction", type=float, default=0.51, help="share of depressed participants")
    p.add_argument("--events-per-participant", type=int, default=8000, help="target event volume")
    p.add_argument("--full-coverage", action="store_true", help="every participant uses every category")
    p.add_argument("--out", required=False, help="output directory")

    p = add("featurize", "Ingest events, sessionize and build the behavioral feature tables.")
    p.add_argument("--data", help="directory holding events.jsonl, manifest.json, catalog.csv, labels.csv")
    p.add_argument("--events", help="events JSON-lines file")
    p.add_argument("--manifest", help="cohort manifest JSON")
    p.add_argument("--catalog", help="package,category CSV")
    p.add_argument("--labels", help="labels CSV; fills hamming-ratio columns of matrix.csv")
    p.add_argument("--gap-ms", type=int, default=SESSION_GAP_MS, help="session gap in milliseconds")
    p.add_argument("--min-user-fraction", type=float, default=0.5, help="prevalence filter level")
    p.add_argument("--out", required=False, help="output directory")

    p = add("select", "Run one feature-selection method on the whole cohort (exploratory).")
    _add_data_args(p)
    _add_fs_args(p)
    p.add_argument("--seed", type=int, help="selection seed (required)")
    p.add_argument("--out", help="output JSON path")

    def eval_args(p):
        _add_data_args(p)
        _add_fs_args(p)
        p.add_argument("--seed", type=int, help="master seed (required)")
        p.add_argument("--budget", type=int, default=10, help="random-search draws per spec (1 = defaults only)")
        p.add_argument("--inner-folds", type=int, default=20, help="inner CV folds")
        p.add_argument("--hamming", choices=("per_fold", "global"), default="per_fold",
                       help="recompute hamming ratios per outer fold, or once with self-exclusion")
        p.add_argument("--explain", action="store_true", help="attach exact Shapley values of each test row")
        p.add_argument("--background-max", type=int, default=None, help="cap on background rows for explanations")
        p.add_argument("--out", help="output directory")

    p = add("evaluate", "Nested leave-one-participant-out evaluation of one or more classifiers.")
    eval_args(p)
    p.add_argument("--spec", nargs="+", default=["gbt"], help="algorithms (dummy logit knn gaussian_nb cart "
                   "random_forest adaboost gbt) or JSON spec objects in a config file")

    p = add("stack-evaluate", "Nested evaluation of a stacked ensemble of the best individual models.")
    eval_args(p)
    p.add_argument("--reports", nargs="+", help="eval_*.json files or directories used to rank base models")
    p.add_argument("--spec", nargs="+", default=None, help="explicit ranked base algorithms instead of --reports")
    p.add_argument("--top", type=int, default=5, help="number of base models")
    p.add_argument("--meta-folds", type=int, default=10, help="meta-learner CV folds")
    p.add_argument("--no-parity", action="store_true", help="allow meta-folds other than 10")

    p = add("explain", "Shapley summaries and force data for a fitted model or an evaluation report.")
    _add_data_args(p)
    _add_fs_args(p)
    p.add_argument("--report", help="eval_*.json with attached explanations (test-row view)")
    p.add_argument("--spec", default="gbt", help="algorithm for the whole-cohort model")
    p.add_argument("--budget", type=int, default=1, help="random-search draws for the whole-cohort model")
    p.add_argument("--seed", type=int, help="seed (required unless --report)")
    p.add_argument("--background-max", type=int, default=None, help="cap on background rows")
    p.add_argument("--plots", action="store_true", help="also write SVG plots")
    p.add_argument("--out", help="output directory")

    p = add("report", "Assemble evaluation reports into one JSON and a text table.")
    p.add_argument("--inputs", nargs="+", help="eval_*.json files or directories")
    p.add_argument("--out", help="output directory")
    return parser, subs


def _parse(argv: Sequence[str]):
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = json.loads(_existing(args.config, "config").read_text())
        if not isinstance(cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        sp = subs[args.command]
        known = {a.dest for a in sp._actions}
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise ConfigError(f"unknown config keys for {args.command}: {unknown}")
        sp.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def _require_seed(args):
    if args.seed is None:
        raise ConfigError("--seed is required (no clock-based seeding)")


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> None:
    _require_seed(args)
    if not args.out:
        raise ConfigError("--out is required")
    config = SynthConfig(n=args.n, depressed_fraction=args.depressed_fraction, seed=args.seed,
                         events_per_participant=args.events_per_participant, full_coverage=args.full_coverage)
    cohort = synth_generate(config) if args.mode == "planted" else null_generate(config)
    cohort.write(_out_dir(args.out))


def cmd_featurize(args) -> None:
    base = Path(args.data) if args.data else None
    pick = lambda flag, name: flag if flag else (str(base / name) if base else None)
    events = _existing(pick(args.events, "events.jsonl"), "events")
    manifest = CohortManifest.from_json(_existing(pick(args.manifest, "manifest.json"), "manifest").read_text())
    catalog = load_catalog(_existing(pick(args.catalog, "catalog.csv"), "catalog").read_text())
    labels_path = pick(args.labels, "labels.csv")
    if not args.out:
        raise ConfigError("--out is required")
    out = _out_dir(args.out)
    log = parse_events(events.read_bytes(), manifest)
    intervals = build_intervals(log, manifest)
    sessions = session_table(intervals, args.gap_ms)
    cf = cohort_features(intervals, catalog, manifest, sessions, args.gap_ms)
    filtered = cf.filtered(args.min_user_fraction)
    filtered.save(out / "features.npz")
    if labels_path and Path(labels_path).exists():
        raw = cf.matrix(_labels(labels_path))
    else:
        raw = cf.unlabeled_matrix()
    (out / "matrix.csv").write_text(raw.to_csv())
    kinds = np.bincount(sessions.kind, minlength=3) if len(sessions) else np.zeros(3, int)
    (out / "featurize.json").write_text(_dump({
        "participants": len(cf.participant_ids),
        "raw_columns": len(cf.feature_names),
        "retained_columns": len(cf.feature_names) - len(filtered.dropped),
        "dropped": dict(sorted(filtered.dropped.items())),
        "ingest": intervals.report.as_dict(),
        "intervals": len(intervals),
        "sessions": {"total": len(sessions), "micro": int(kinds[0]), "review": int(kinds[1]),
                     "engage": int(kinds[2])},
        "gap_ms": args.gap_ms,
        "hamming_columns": "all labels, self-excluded" if labels_path and Path(labels_path).exists() else "zero",
    }))


def _whole_cohort(cf: CohortFeatures, labels: dict[str, int]):
    ids = cf.participant_ids
    matrix = cf.matrix({p: labels[p] for p in ids})
    z = apply_scaler(matrix, fit_scaler(matrix, ids))
    y = np.array([labels[p] for p in ids])
    return z, y


def cmd_select(args) -> None:
    _require_seed(args)
    cf, labels = _features(args.features), _labels(args.labels)
    z, y = _whole_cohort(cf, labels)
    fs = _fs_config(args)
    result = run_selection(fs.method, z.values, y, z.feature_names, seed=args.seed, **fs.params)
    payload = json.loads(result.to_json())
    if fs.method == "stable":
        payload["sweep"] = [{"threshold": t, "count": len(s), "selected": s} for t, s in threshold_sweep(result)]
    if not args.out:
        raise ConfigError("--out is required")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(_dump(payload))


def _specs(raw, budget: int, seed: int) -> list[ModelSpec]:
    specs = []
    for item in raw:
        if isinstance(item, str) and item.strip().startswith("{"):
            item = json.loads(item)
        if isinstance(item, str):
            specs.append(ModelSpec(item, budget=budget, seed=seed))
        else:
            item = dict(item)
            item.setdefault("budget", budget)
            item.setdefault("seed", seed)
            specs.append(ModelSpec.from_json(item))
    return specs


def _threads(args) -> int:
    return max(1, args.threads if args.threads else (os.cpu_count() or 1))


def _write_reports(reports: dict[str, EvalReport], out: Path) -> None:
    for name, report in reports.items():
        (out / f"eval_{name}.json").write_text(report.to_json() + "\n")


def cmd_evaluate(args) -> None:
    _require_seed(args)
    if not args.out:
        raise ConfigError("--out is required")
    cf, labels = _features(args.features), _labels(args.labels)
    specs = _specs(args.spec, args.budget, args.seed)
    reports = nested_lopocv(cf, labels, specs, _fs_config(args), seed=args.seed, inner_folds=args.inner_folds,
                            hamming=args.hamming, explain=args.explain, background_max=args.background_max,
                            n_jobs=_threads(args))
    _write_reports(reports, _out_dir(args.out))


def _report_files(items) -> list[Path]:
    files = []
    for item in items or []:
        p = _existing(item, "report input")
        files.extend(sorted(p.glob("eval_*.json")) if p.is_dir() else [p])
    if not files:
        raise ConfigError("no evaluation reports found")
    return files


def cmd_stack_evaluate(args) -> None:
    _require_seed(args)
    if not args.out:
        raise ConfigError("--out is required")
    cf, labels = _features(args.features), _labels(args.labels)
    if args.spec:
        ranked = list(args.spec)
    else:
        reports = [EvalReport.from_json(f.read_text()) for f in _report_files(args.reports)]
        reports = [r for r in reports if r.spec != "stack"]
        ranked = [r.spec for r in sorted(reports, key=lambda r: (-r.metrics.f1, r.spec))]
    bases = _specs(ranked[: args.top], args.budget, args.seed)
    spec = StackSpec(bases, args.meta_folds, parity=not args.no_parity)
    reports = nested_lopocv(cf, labels, [spec], _fs_config(args), seed=args.seed, inner_folds=args.inner_folds,
                            hamming=args.hamming, explain=args.explain, background_max=args.background_max,
                            n_jobs=_threads(args))
    _write_reports(reports, _out_dir(args.out))


def _write_explanations(explanations: list[ShapExplanation], out: Path, plots: bool, align: bool) -> None:
    summary = export_summary(explanations, align=align)
    (out / "summary.json").write_text(summary_json(summary) + "\n")
    force_dir = out / "force"
    force_dir.mkdir(exist_ok=True)
    for e in explanations:
        force = export_force(e)
        (force_dir / f"{e.participant_id}.json").write_text(_dump(force))
        if plots:
            (force_dir / f"{e.participant_id}.svg").write_text(force_svg(force))
    if plots:
        (out / "summary.svg").write_text(summary_svg(summary))


def cmd_explain(args) -> None:
    if not args.out:
        raise ConfigError("--out is required")
    out = _out_dir(args.out)
    if args.report:
        report = EvalReport.from_json(_existing(args.report, "report").read_text())
        explanations = [ShapExplanation.from_json(r.explanation) for r in report.rows if r.explanation]
        if not explanations:
            raise DataError("report carries no explanations (run evaluate with --explain)")
        _write_explanations(explanations, out, args.plots, align=True)
        return
    _require_seed(args)
    cf, labels = _features(args.features), _labels(args.labels)
    z, y = _whole_cohort(cf, labels)
    fs = _fs_config(args)
    selection = run_selection(fs.method, z.values, y, z.feature_names, seed=args.seed, **fs.params)
    names = selection.selected or sorted(selection.scores, key=lambda n: (-selection.scores[n], n))[:1]
    X = z.columns(names).values
    spec = _specs([args.spec], args.budget, args.seed)[0]
    from .learn.tuning import tune
    params, _ = tune(spec, X, y, seed=args.seed)
    model = fit(spec, X, y, params, names)
    (out / "model.json").write_text(model.to_json() + "\n")
    background = X if args.background_max is None else X[: args.background_max]
    explanations = [exact_shapley(model, X[i], background, participant_id=pid, feature_names=names)
                    for i, pid in enumerate(z.participant_ids)]
    _write_explanations(explanations, out, args.plots, align=False)


def cmd_report(args) -> None:
    if not args.out:
        raise ConfigError("--out is required")
    reports = [EvalReport.from_json(f.read_text()) for f in _report_files(args.inputs)]
    rows = []
    for r in reports:
        m = r.metrics
        rows.append({"fs": r.fs["method"], "fs_params": r.fs["params"], "spec": r.spec, "hamming": r.hamming,
                     "seed": r.seed, "n": len(r.rows), "precision": m.precision, "sensitivity": m.sensitivity,
                     "specificity": m.specificity, "f1": m.f1, "accuracy": m.accuracy,
                     "balanced_accuracy": m.balanced_accuracy, "auc": m.auc, "undefined": list(m.undefined),
                     "held_out_touches": r.audit.get("held_out_touches", 0)})
    rows.sort(key=lambda r: (r["fs"], -r["f1"], r["spec"]))
    best = {}
    for r in rows:
        best.setdefault(r["fs"], r)
    out = _out_dir(args.out)
    (out / "report.json").write_text(_dump({"models": rows, "best_per_fs": best}))
    cols = ("precision", "sensitivity", "specificity", "f1", "accuracy", "balanced_accuracy", "auc")
    lines = ["Best model per feature-selection method", ""]
    header = f"{'FS':<8} {'model':<14} " + " ".join(f"{c[:11]:>11}" for c in cols)
    lines += [header, "-" * len(header)]
    lines += [f"{fs:<8} {r['spec']:<14} " + " ".join(f"{r[c]:>11.3f}" for c in cols) for fs, r in sorted(best.items())]
    lines += ["", "All models", "", header, "-" * len(header)]
    lines += [f"{r['fs']:<8} {r['spec']:<14} " + " ".join(f"{r[c]:>11.3f}" for c in cols) for r in rows]
    (out / "report.txt").write_text("\n".join(lines) + "\n")


COMMANDS = {
    "synth": cmd_synth, "featurize": cmd_featurize, "select": cmd_select, "evaluate": cmd_evaluate,
    "stack-evaluate": cmd_stack_evaluate, "explain": cmd_explain, "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse(argv)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except PipelineAssertion as exc:
        print(f"internal assertion: {exc}", file=sys.stderr)
        return 3
    except AppScreenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
