"""Leakage check on null cohorts: every classifier should sit near chance.

Labels are drawn independently of behavior, so a balanced accuracy far from
0.5 averaged over seeds points at information flowing from held-out rows.
"""
import argparse
import warnings

import numpy as np

from appscreen.cohort import SynthConfig, null_generate
from appscreen.features import cohort_features
from appscreen.ingest import build_intervals, parse_events
from appscreen.learn.cv import FSConfig, StackSpec, nested_lopocv
from appscreen.learn.models import ALGORITHMS, ModelSpec


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--n", type=int, default=60)
    ap.add_argument("--fs", default="ig", choices=("ig", "stable", "rf", "boruta", "none"))
    ap.add_argument("--hamming", default="per_fold", choices=("per_fold", "global"))
    args = ap.parse_args()
    warnings.filterwarnings("ignore", message="inner CV reduced")
    params = {"ig": {"k": 5}, "rf": {"k": 5}}.get(args.fs, {})
    scores, touches = {}, 0
    for seed in range(args.seeds):
        cohort = null_generate(SynthConfig(n=args.n, seed=1000 + seed))
        intervals = build_intervals(parse_events(cohort.events, cohort.manifest), cohort.manifest)
        features = cohort_features(intervals, cohort.catalog, cohort.manifest).filtered(0.5)
        specs = [ModelSpec(a, budget=1, seed=seed) for a in ALGORITHMS]
        specs.append(StackSpec([ModelSpec(a, budget=1) for a in ("gbt", "random_forest", "logit", "knn", "gaussian_nb")]))
        reports = nested_lopocv(features, cohort.classes, specs, FSConfig(args.fs, params), seed=seed,
                                hamming=args.hamming)
        touches += next(iter(reports.values())).audit["held_out_touches"]
        for name, report in reports.items():
            scores.setdefault(name, []).append(report.metrics.balanced_accuracy)
        print(f"seed {seed}: " + " ".join(f"{k}={v[-1]:.2f}" for k, v in scores.items()), flush=True)
    print("mean balanced accuracy:")
    for name, values in scores.items():
        print(f"  {name:<14} {np.mean(values):.3f}")
    print(f"held-out touches: {touches}")


if __name__ == "__main__":
    main()
