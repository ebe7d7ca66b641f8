"""Command-line entry point: ``haptest simulate | features | recognize | config``.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage or
configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, dump_config, load_config
from .errors import ConfigError, HaptestError
from .exploration import ACTIONS, iter_records, read_meta, run_campaign
from .features import (SCHEMAS, FeatureMatrix, chi_square_rank, cssf_features, feature_matrix,
                       record_features)
from .learning import ablation, cluster_nmi, cross_validate

log = logging.getLogger("haptest")


class UsageError(Exception):
    pass


def output_root(args):
    return Path(args.out or os.environ.get("HAPTEST_OUT") or "haptest_out")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    camp = cfg.campaign
    if getattr(args, "seed", None) is not None:
        camp = replace(camp, seed=args.seed)
    if getattr(args, "jobs", None) is not None:
        if args.jobs < 1:
            raise ConfigError("must be >= 1", "--jobs")
        camp = replace(camp, jobs=args.jobs)
    if getattr(args, "objects", None):
        try:
            objs = tuple(int(v) for v in args.objects.split(",") if v.strip())
        except ValueError as exc:
            raise ConfigError("expected comma-separated integers", "--objects") from exc
        camp = replace(camp, objects=objs)
    if getattr(args, "trials", None) is not None:
        if args.trials < 1:
            raise ConfigError("must be >= 1", "--trials")
        camp = replace(camp, trials_per_pair=args.trials)
    return replace(cfg, campaign=camp)


def _schemas(arg, default):
    if not arg:
        return tuple(default)
    out = tuple(s.strip().upper() for s in arg.split(",") if s.strip())
    bad = [s for s in out if s not in SCHEMAS]
    if bad:
        raise ConfigError(f"unknown schema(s) {bad}; choose from {', '.join(SCHEMAS)}", "--schema")
    return out


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------

def cmd_simulate(args):
    cfg = _config(args)
    catalog = cfg.catalog()
    c = cfg.campaign
    campaign_id = args.campaign_id or f"seed{c.seed}-{cfg.digest()[:10]}"
    out = output_root(args) / "dataset" / campaign_id
    summary = {}

    def collect(rec):
        summary.setdefault(rec.label, {}).setdefault(rec.action, []).append(
            record_features(rec, cfg.features.window))

    ds = run_campaign(catalog, cfg.actions, c.trials_per_pair, c.seed, cfg.robot, cfg.estimator,
                      cfg.controller, out_dir=out, jobs=c.jobs, batch_size=c.batch_size,
                      keep_records=False, on_record=collect,
                      variation=c.variation())
    print(f"dataset: {out}")
    print(f"trials: {len(read_meta(out)['trials'])}, failed: {len(ds.failures)}")
    print(_summary_table(catalog, summary))
    return 0


def _summary_table(catalog, summary):
    head = f"{'obj':>4} {'name':<9} {'k true':>8} {'k est':>8} {'d true':>7} {'d est':>7} " \
           f"{'mu true':>7} {'mu est':>7} {'psi true':>8} {'psi est':>7}"
    lines = [head]
    for s in catalog:
        got = summary.get(s.label, {})

        def avg(action, key):
            vals = [p[key] for p in got.get(action, []) if np.isfinite(p[key])]
            return float(np.mean(vals)) if vals else float("nan")

        psi = float("nan") if s.restitution is None else s.restitution
        lines.append(f"{s.label:>4} {s.name:<9} {s.stiffness:>8.1f} {avg('indentation', 'stiffness'):>8.1f} "
                     f"{s.viscosity:>7.2f} {avg('indentation', 'viscosity'):>7.2f} {s.friction:>7.3f} "
                     f"{avg('sliding', 'friction'):>7.3f} {psi:>8.3f} {avg('tapping', 'restitution'):>7.3f}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# features
# --------------------------------------------------------------------------

def load_tuples(dataset, window=2.0):
    dataset = Path(dataset)
    if not (dataset / "meta.json").is_file():
        raise ConfigError(f"{dataset} is not a dataset directory (no meta.json)", "dataset")
    parts = {}
    for rec in iter_records(dataset):
        parts.setdefault((rec.label, rec.trial), {})[rec.action] = record_features(rec, window)
    complete = {k: v for k, v in parts.items() if all(a in v for a in ACTIONS)}
    dropped = len(parts) - len(complete)
    if dropped:
        log.warning("skipping %d incomplete object trial tuple(s)", dropped)
    return complete


def cmd_features(args):
    cfg = _config(args)
    schemas = _schemas(args.schema, cfg.features.schemas)
    tuples = load_tuples(args.dataset, cfg.features.window)
    if not tuples:
        raise HaptestError("dataset holds no complete object trial tuples")
    out = output_root(args)
    out.mkdir(parents=True, exist_ok=True)
    for schema in schemas:
        if schema == "CSSF":
            m = cssf_features(feature_matrix(tuples, "SF"), fixed=cfg.features.cssf_fixed)
        else:
            m = feature_matrix(tuples, schema)
        path = m.save_csv(out / f"features_{schema}.csv")
        print(f"{schema}: {len(m)} rows x {len(m.names)} features -> {path}")
        if schema in ("SF", "SF36"):
            print(f"chi-square ranking ({schema})")
            for i, (name, score) in enumerate(chi_square_rank(m), start=1):
                print(f"  {i:>2}. {name:<28} {score:10.2f}")
    return 0


# --------------------------------------------------------------------------
# recognize
# --------------------------------------------------------------------------

def cmd_recognize(args):
    cfg = _config(args)
    lc = cfg.learning
    seed = lc.seed if args.seed is None else args.seed
    wanted = _schemas(args.schema, ()) if args.schema else None
    matrices = {}
    for p in args.features:
        if not Path(p).is_file():
            raise ConfigError(f"feature file {p} does not exist", "features")
        m = FeatureMatrix.load_csv(p)
        if wanted is None or m.schema in wanted:
            matrices[m.schema] = m
    if not matrices:
        raise ConfigError("no feature file matches the requested schema", "--schema")
    out = output_root(args)
    out.mkdir(parents=True, exist_ok=True)
    report = {"config_digest": cfg.digest(), "seed": seed, "folds": lc.folds,
              "repetitions": lc.repetitions, "schemas": {}}
    for schema, m in matrices.items():
        rep = cross_validate(m, folds=lc.folds, repetitions=lc.repetitions, seed=seed)
        rep.clustering = cluster_nmi(m, k=min(lc.k, len(m)), repetitions=lc.cluster_repetitions, seed=seed)
        entry = rep.to_dict()
        print(f"\n[{schema}] accuracy {100 * rep.accuracy_mean:.2f} +/- {100 * rep.accuracy_std:.2f} %  "
              f"NMI {rep.clustering.nmi_mean:.3f} +/- {rep.clustering.nmi_std:.3f}")
        text = rep.render_confusion()
        (out / f"confusion_{schema}.txt").write_text(text + "\n")
        print(text)
        if schema == "MP":
            entry["ablation"] = ablation(m, folds=lc.folds, repetitions=lc.repetitions, seed=seed)
            print("\nablation (MP)")
            for row in entry["ablation"]:
                print(f"  {100 * row['accuracy_mean']:6.2f} +/- {100 * row['accuracy_std']:4.2f} %  "
                      f"{', '.join(row['features'])}")
        report["schemas"][schema] = entry
    path = out / "report.json"
    path.write_text(json.dumps(report, indent=1))
    print(f"\nreport: {path}")
    return 0


def cmd_config(args):
    if not args.dump_defaults and not args.config:
        raise UsageError("config: pass --dump-defaults or --config FILE")
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    sys.stdout.write(dump_config(cfg))
    return 0


# --------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="output root (default: $HAPTEST_OUT or ./haptest_out)")
    common.add_argument("--jobs", type=int, help="worker processes for trial batches")
    common.add_argument("--schema", help="comma-separated feature schemas (MP, SF, SF36, CSSF)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="haptest", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run the exploration campaign")
    s.add_argument("--objects", help="comma-separated object labels (default: whole catalog)")
    s.add_argument("--trials", type=int, help="trials per object and action")
    s.add_argument("--campaign-id", help="dataset directory name")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("features", parents=[common], help="build feature matrices from a dataset")
    f.add_argument("dataset", help="dataset directory containing meta.json")
    f.set_defaults(func=cmd_features)

    r = sub.add_parser("recognize", parents=[common], help="classify and cluster feature matrices")
    r.add_argument("features", nargs="+", help="feature CSV files (features_<SCHEMA>.csv)")
    r.set_defaults(func=cmd_recognize)

    c = sub.add_parser("config", parents=[common], help="print configuration")
    c.add_argument("--dump-defaults", action="store_true", help="print the built-in defaults")
    c.set_defaults(func=cmd_config)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"haptest: error: {exc}", file=sys.stderr)
        return 2
    except (HaptestError, OSError, ValueError) as exc:
        print(f"haptest: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
