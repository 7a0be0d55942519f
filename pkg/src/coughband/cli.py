"""Command-line entry point: ``coughband <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .audio import load_manifest
from .cnn import TrainConfig, load_model
from .occlusion import CONFIDENCE_CUTOFF, MaskConfig
from . import pipeline as pl


def _th_list(text):
    try:
        values = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad threshold list {text!r}")
    if not values or any(not 0 <= v <= 100 for v in values):
        raise argparse.ArgumentTypeError("thresholds are percentiles in [0, 100]")
    return [int(v) if v.is_integer() else v for v in values]


def cmd_ingest(args):
    index = pl.stage_ingest(load_manifest(args.manifest), args.out)
    print(f"wrote {len(index)} clips to {args.out}")


def cmd_spectrogram(args):
    index = pl.stage_spectrogram(args.clips, args.out)
    print(f"wrote {len(index)} spectrograms to {args.out}")


def cmd_train(args):
    manifest = load_manifest(args.manifest, check_files=False)
    overrides = {k: v for k, v in (("epochs", args.epochs), ("batch_size", args.batch_size)) if v}
    cfg = TrainConfig(seed=args.seed, **overrides)
    plan = pl.fold_plan(args.specs, manifest, cfg, args.seed)
    if not 0 <= args.fold < len(plan.folds):
        raise SystemExit(f"fold must be in [0, {len(plan.folds) - 1}]")
    model = pl.stage_train_fold(args.specs, plan, args.fold, cfg, args.out)
    print(json.dumps({"fold": args.fold, "test_patients": plan.folds[args.fold].test_patients,
                      "last_epoch": model.history[-1]}))


def cmd_eval(args):
    model = load_model(args.model)
    if args.out:
        pl.write_eval_csv(args.out, model, args.specs)
    else:
        pl.write_eval_csv(sys.stdout, model, args.specs)


def cmd_explain(args):
    mask = MaskConfig(args.patch_height, args.patch_width, args.stride_k, args.stride_n, args.fill)
    index = pl.stage_explain(load_model(args.model), args.specs, args.patient, args.th, mask,
                             args.out, args.cutoff)
    n = sum(1 for v in index.values() if v["patient_id"] == args.patient and v["kind"] == "weighted")
    print(f"patient {args.patient}: {n} weighted spectrograms in {args.out}")


def cmd_features(args):
    vectors = pl.stage_features(args.weighted, args.out)
    print(f"wrote features for {len(vectors)} weighted spectrograms to {args.out}")


def cmd_compare(args):
    manifest = load_manifest(args.manifest, check_files=False)
    results = pl.stage_compare(args.features, manifest, args.th, args.out, args.groups)
    sig = sum(r.significant for r in results)
    print(f"{sig} of {len(results)} cells significant at p < 0.05; tables in {args.out}")


def cmd_report(args):
    manifest = load_manifest(args.manifest, check_files=False)
    results = pl.read_results_csv(Path(args.results) / "results_long.csv")
    cells = pl.stage_report(results, args.features, manifest, args.results, args.all, args.svg)
    print(f"boxplot data for {len(cells)} cells in {Path(args.results) / 'boxplots.json'}")


def cmd_synth(args):
    from .synth import SynthParams, generate_synthetic_cohort

    offsets = {"C1": {args.band: args.offset_db}} if args.offset_db else {}
    params = SynthParams(patients_per_cohort=args.patients, coughs_per_patient=args.coughs,
                         noncoughs_per_patient=args.noncoughs, band_offsets_db=offsets)
    path = generate_synthetic_cohort(args.out, params, args.seed)
    print(f"synthetic cohort manifest: {path}")


def cmd_run(args):
    summary = pl.run_pipeline(pl.PipelineConfig.from_json(args.config))
    print(json.dumps({k: summary[k] for k in ("significant_cells", "tested_cells",
                                              "skipped_patients", "config_sha256")}, indent=1))


def build_parser():
    p = argparse.ArgumentParser(prog="coughband", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="decode, down-sample and cut one-second clips")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("spectrogram", help="45x100 spectrograms from a clip store")
    s.add_argument("--clips", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_spectrogram)

    s = sub.add_parser("train", help="train the classifier on one patient-grouped fold")
    s.add_argument("--specs", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--fold", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="per-clip class probabilities as CSV")
    s.add_argument("--model", required=True)
    s.add_argument("--specs", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("explain", help="occlusion maps and weighted spectrograms for a patient")
    s.add_argument("--model", required=True)
    s.add_argument("--specs", required=True)
    s.add_argument("--patient", required=True)
    s.add_argument("--th", type=_th_list, default=[70])
    s.add_argument("--cutoff", type=float, default=CONFIDENCE_CUTOFF)
    s.add_argument("--patch-height", type=int, default=5)
    s.add_argument("--patch-width", type=int, default=10)
    s.add_argument("--stride-k", type=int, default=1)
    s.add_argument("--stride-n", type=int, default=1)
    s.add_argument("--fill", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_explain)

    s = sub.add_parser("features", help="band-specific spectral features to CSV")
    s.add_argument("--weighted", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("compare", help="cohort comparisons per study group, band, feature and Th")
    s.add_argument("--features", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--th", type=_th_list, default=[50, 60, 70, 80, 90])
    s.add_argument("--groups", type=lambda t: t.split(","))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("report", help="boxplot data for significant cells")
    s.add_argument("--results", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--all", action="store_true", help="emit every cell, not only significant ones")
    s.add_argument("--svg", action="store_true", help="also render SVG boxplots (needs matplotlib)")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("synth", help="write a synthetic two-cohort study")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--patients", type=int, default=6, help="patients per cohort")
    s.add_argument("--coughs", type=int, default=12)
    s.add_argument("--noncoughs", type=int, default=12)
    s.add_argument("--band", default="B3")
    s.add_argument("--offset-db", type=float, default=6.0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("run", help="full pipeline from a config file")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        args.func(args)
    except (pl.PipelineError, pl.ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
