"""Object recognition from identified mechanical properties.

Runs a reduced exploration campaign over the 20 catalog objects, builds the
four-property MP features and the 35 statistical SF features, and compares
them with naive Bayes cross-validation and Gaussian mixture clustering.  The
ablation shows which properties the recognition depends on.

    python demos/recognition.py [--trials 8] [--jobs 1]

The full 25-trial campaign is what the acceptance suite runs; eight trials
already show the same picture in a fraction of the time.
"""
import argparse
import time

from haptest.exploration import default_catalog, run_campaign
from haptest.features import feature_matrix, record_features
from haptest.learning import ablation, cluster_nmi, cross_validate


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--trials", type=int, default=8)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    parts = {}

    def collect(rec):
        parts.setdefault((rec.label, rec.trial), {})[rec.action] = record_features(rec)

    t0 = time.perf_counter()
    run_campaign(default_catalog(), trials_per_pair=args.trials, seed=args.seed, jobs=args.jobs,
                 keep_records=False, on_record=collect)
    print(f"campaign: {len(parts)} object trials in {time.perf_counter() - t0:.0f} s\n")

    folds = min(4, args.trials)
    for schema in ("MP", "SF"):
        m = feature_matrix(parts, schema)
        rep = cross_validate(m, folds=folds, repetitions=50, seed=args.seed)
        clusters = cluster_nmi(m, k=20, repetitions=10, seed=args.seed)
        print(f"{schema:<3} {m.X.shape[1]:>2} features  accuracy {100 * rep.accuracy_mean:6.2f} "
              f"+/- {100 * rep.accuracy_std:.2f} %   NMI {clusters.nmi_mean:.3f}")

    print("\nMP ablation")
    for row in ablation(feature_matrix(parts, "MP"), folds=folds, repetitions=50, seed=args.seed):
        print(f"  {100 * row['accuracy_mean']:6.2f} %  {', '.join(row['features'])}")


if __name__ == "__main__":
    main()
