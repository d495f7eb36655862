"""Stability-selection threshold sweep on a synthetic cohort (whole-cohort, no CV).

Prints the selected-set size at every threshold from 0.50 to 0.98.
"""
import argparse

import numpy as np

from appscreen.cohort import SynthConfig, null_generate, synth_generate
from appscreen.features import apply_scaler, cohort_features, fit_scaler
from appscreen.ingest import build_intervals, parse_events
from appscreen.select import stability_select, threshold_sweep


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--null", action="store_true", help="labels independent of behavior")
    ap.add_argument("--n-boot", type=int, default=1000)
    args = ap.parse_args()
    config = SynthConfig(n=args.n, seed=args.seed)
    cohort = null_generate(config) if args.null else synth_generate(config)
    intervals = build_intervals(parse_events(cohort.events, cohort.manifest), cohort.manifest)
    features = cohort_features(intervals, cohort.catalog, cohort.manifest).filtered(0.5)
    matrix = features.matrix(cohort.classes)
    z = apply_scaler(matrix, fit_scaler(matrix, matrix.participant_ids))
    y = np.array([cohort.classes[p] for p in z.participant_ids])
    result = stability_select(z.values, y, z.feature_names, n_boot=args.n_boot, seed=args.seed)
    for threshold, selected in threshold_sweep(result):
        print(f"{threshold:.2f}  {len(selected):3d}  {' '.join(selected[:4])}{' ...' if len(selected) > 4 else ''}")


if __name__ == "__main__":
    main()
