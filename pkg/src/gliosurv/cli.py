"""``gliosurv`` command-line interface.

Exit codes: 0 success, 1 validation or configuration error (including bad
usage), 2 I/O or file-format error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ellipsoid import relative_invasiveness
from .evaluation import DEFAULT_THRESHOLDS, dumps_json, format_reports, metrics
from .exceptions import ConfigurationError, FormatError, GliosurvError, ValidationError
from .fusion import majority_vote, postprocess, seg_metrics
from .nifti import read_volume, write_volume
from .pipeline import (
    MODEL_KINDS,
    PipelineConfig,
    PrognosticModel,
    StageError,
    cross_validate_table,
    extract_all,
    extract_cohort,
    feature_names,
    run_study,
)
from .models import RandomForestSurvivalRegressor
from .selection import select_features
from .synth import CohortSpec, make_cohort
from .table import FeatureTable

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(ConfigurationError):
    def __init__(self, message, prog=None):
        super().__init__(message)
        self.prog = prog


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, prog=self.prog)


def _emit(args, payload, text=None):
    if args.json:
        print(dumps_json(payload))
    else:
        print(text if text is not None else dumps_json(payload))


def _csv_floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _csv_ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _json_obj(text):
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"invalid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise argparse.ArgumentTypeError("expected a JSON object")
    return obj


def _seed(args):
    return 0 if args.seed is None else args.seed


def _threads(args):
    return args.threads


def _read_list(path):
    return [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]


# commands --------------------------------------------------------------------

def cmd_extract(args):
    if (args.input is None) == (args.cohort is None):
        raise UsageError("extract needs exactly one of --in or --cohort")
    if args.cohort is not None:
        table, failures = extract_cohort(args.cohort, radiomics=not args.ric_only, n_jobs=_threads(args))
    else:
        vol = read_volume(args.input, kind="label")
        brain = read_volume(args.brain) if args.brain else None
        brain_ref = None
        if brain is not None:
            brain_ref = brain.data != 0
        sid = args.subject_id or Path(args.input).parent.name or Path(args.input).name
        feats = extract_all(vol, brain_ref=brain_ref, subject_id=sid, radiomics=not args.ric_only)
        names = feature_names() if not args.ric_only else ["RIC"]
        table = FeatureTable([sid], names, np.asarray([[feats[nm] for nm in names]]))
        failures = []
    table.to_csv(args.out)
    for sid, reason in failures:
        print(f"warning: subject {sid} skipped: {reason}", file=sys.stderr)
    payload = {"out": str(args.out), "subjects": len(table), "features": len(table.feature_names),
               "failures": [list(f) for f in failures]}
    _emit(args, payload, f"wrote {len(table)} subject(s) x {len(table.feature_names)} features to {args.out}")


def cmd_ric(args):
    vol = read_volume(args.input, kind="label")
    res = relative_invasiveness(vol, subject_id=args.subject_id or str(args.input), tol=args.tol)
    _emit(args, res.to_dict(), repr(res.ric))


def cmd_select(args):
    table = FeatureTable.from_csv(args.table)
    est = RandomForestSurvivalRegressor(n_trees=args.trees, n_jobs=_threads(args))
    report = select_features(
        table, threshold=args.threshold, estimator=est, sizes=args.sizes, k=args.k, seed=_seed(args),
        tie_tolerance=args.tie_tolerance, one_at_a_time=args.one_at_a_time, importance=args.importance,
    )
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n")
    if args.selected_out:
        Path(args.selected_out).write_text("".join(f"{nm}\n" for nm in report.selected))
    text = "\n".join(f"{nm:<45s} {imp:7.2f}" for nm, imp in report.ranking)
    _emit(args, report.to_dict(), text)


def _model_from_args(args):
    selection = dict(args.selection or {})
    if getattr(args, "selected", None):
        selection["features"] = _read_list(args.selected)
    return PrognosticModel(args.model, params=args.params, selection=selection or None, seed=_seed(args),
                           n_jobs=_threads(args))


def cmd_train(args):
    table = FeatureTable.from_csv(args.table)
    model = _model_from_args(args).fit_table(table)
    Path(args.out).write_text(model.to_json() + "\n")
    rep = metrics(model.predict_table(table), table.targets, tuple(args.thresholds))
    payload = {"model": args.model, "inputs": model.inputs_, "out": str(args.out), "train": rep.to_dict()}
    _emit(args, payload, f"{args.model} model on {', '.join(model.inputs_)} written to {args.out}")


def cmd_predict(args):
    model = PrognosticModel.from_json(Path(args.model).read_text())
    model.set_params(n_jobs=_threads(args))
    table = FeatureTable.from_csv(args.table)
    pred = model.predict_table(table)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "prediction"])
            for sid, p in zip(table.subjects, pred):
                w.writerow([sid, repr(float(p))])
    payload = {"predictions": {sid: float(p) for sid, p in zip(table.subjects, pred)}}
    _emit(args, payload, "\n".join(f"{sid}\t{p:.1f}" for sid, p in zip(table.subjects, pred)))


def _read_predictions(path):
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"id", "prediction"} <= set(reader.fieldnames):
            raise FormatError(f"{path}: prediction CSV needs columns id,prediction")
        for row in reader:
            try:
                out[row["id"]] = float(row["prediction"])
            except ValueError as exc:
                raise FormatError(f"{path}: subject {row['id']}: {exc}") from exc
    return out


def cmd_evaluate(args):
    preds = _read_predictions(args.pred)
    table = FeatureTable.from_csv(args.table)
    missing = [s for s in table.subjects if s not in preds]
    if missing:
        raise ValidationError(f"no prediction for subjects {missing[:10]}")
    pred = np.asarray([preds[s] for s in table.subjects])
    rep = metrics(pred, table.require_targets(), tuple(args.thresholds))
    _emit(args, rep.to_dict(), _report_text(rep))


def _report_text(rep):
    return format_reports([("", rep)])


def cmd_cv(args):
    table = FeatureTable.from_csv(args.table)
    model = _model_from_args(args)
    rep = cross_validate_table(model, table, k=args.k, seed=_seed(args), thresholds=tuple(args.thresholds))
    _emit(args, rep.to_dict(), _report_text(rep))


def cmd_study(args):
    if not args.config:
        raise UsageError("study needs --config")
    with open(args.config) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{args.config}: invalid JSON: {exc}") from exc
    cfg = PipelineConfig.from_json(args.config)
    if args.out:
        cfg.output_dir = str(args.out)
    if args.seed is not None:
        cfg.seed = args.seed
    if "n_jobs" not in raw:
        cfg.n_jobs = _threads(args)
    result = run_study(cfg)
    for sid, reason in result.failures:
        print(f"warning: subject {sid} skipped: {reason}", file=sys.stderr)
    _emit(args, result.to_dict(), result.table_text())


def cmd_fuse(args):
    members = [read_volume(p, kind="label") for p in args.inputs]
    fused = majority_vote(members, args.weights)
    write_volume(fused, args.out)
    _emit(args, {"out": str(args.out), "members": len(members)}, f"fused {len(members)} maps into {args.out}")


def cmd_postproc(args):
    vol = read_volume(args.input, kind="label")
    t1gd = read_volume(args.t1gd, kind="intensity") if args.t1gd else None
    out = postprocess(
        vol, t1gd, min_wt=args.min_wt, min_et=args.min_et, et_floor=args.et_floor, z_et=args.z_et,
        normalize_intensity=args.zscore_t1gd, connectivity=args.connectivity,
    )
    write_volume(out, args.out)
    counts = {str(lab): int(np.count_nonzero(out.data == lab)) for lab in (0, 1, 2, 4)}
    _emit(args, {"out": str(args.out), "label_counts": counts}, f"wrote {args.out}")


def cmd_segmetrics(args):
    pred = read_volume(args.pred, kind="label")
    ref = read_volume(args.ref, kind="label")
    score = seg_metrics(pred, ref, 95 if args.hd95 else 100)
    lines = [f"{r}: dice {score.dice[r]:.4f}  hausdorff {score.hausdorff[r]:.3f} mm" for r in score.dice]
    _emit(args, score.to_dict(), "\n".join(lines))


def cmd_synth(args):
    spec = CohortSpec.from_json(args.spec) if args.spec else CohortSpec()
    if args.n is not None:
        spec.n_subjects = args.n
    if args.seed is not None:
        spec.seed = args.seed
    spec.__post_init__()
    subjects = make_cohort(spec, args.out, n_jobs=_threads(args))
    _emit(args, {"out": str(args.out), "subjects": len(subjects)}, f"wrote {len(subjects)} subjects to {args.out}")


# parser ----------------------------------------------------------------------

def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0, or the seed in --spec / --config)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads (default: all cores)")
    p.add_argument("--config", help="JSON file of option defaults; command-line flags win")
    return p


def _model_opts(p, model_required=True):
    p.add_argument("--table", required=True, help="feature table CSV")
    p.add_argument("--model", required=model_required, choices=MODEL_KINDS)
    p.add_argument("--params", type=_json_obj, default=None, help="estimator parameters as a JSON object")
    p.add_argument("--selection", type=_json_obj, default=None, help="radiomics selection options as JSON")
    p.add_argument("--selected", help="text file of feature names (radiomics model; skips selection)")
    p.add_argument("--thresholds", type=_csv_floats, default=list(DEFAULT_THRESHOLDS),
                   help="survival class thresholds in days (default 300,450)")


def build_parser():
    common = _common()
    parser = _Parser(prog="gliosurv", description="Tumour structure-map radiomics and survival prediction.")
    parser.add_argument("--version", action="version", version=f"gliosurv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", parents=[common], help="radiomics + RIC feature extraction")
    p.add_argument("--in", dest="input", help="one seg.nii[.gz]")
    p.add_argument("--cohort", help="cohort directory <root>/<id>/seg.nii[.gz] (+ cohort.csv)")
    p.add_argument("--out", required=True, help="output feature table CSV")
    p.add_argument("--brain", help="brain mask defining the reference centroid")
    p.add_argument("--subject-id")
    p.add_argument("--ric-only", action="store_true", help="skip the 162 radiomics features")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("ric", parents=[common], help="relative invasiveness coefficient of one map")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--subject-id")
    p.add_argument("--tol", type=float, default=1e-3)
    p.set_defaults(func=cmd_ric)

    p = sub.add_parser("select", parents=[common], help="correlation pruning + RFE")
    p.add_argument("--table", required=True)
    p.add_argument("--out", help="selection report JSON")
    p.add_argument("--selected-out", help="plain-text list of selected features")
    p.add_argument("--threshold", type=float, default=0.95)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--sizes", type=_csv_ints, default=None)
    p.add_argument("--trees", type=int, default=500)
    p.add_argument("--tie-tolerance", type=float, default=1.0)
    p.add_argument("--one-at-a-time", action="store_true", help="eliminate one feature per step")
    p.add_argument("--importance", choices=("impurity", "permutation"), default="impurity")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", parents=[common], help="fit a prognostic model")
    _model_opts(p)
    p.add_argument("--out", required=True, help="model JSON")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="predict survival with a saved model")
    p.add_argument("--model", required=True, help="model JSON")
    p.add_argument("--table", required=True)
    p.add_argument("--out", help="predictions CSV (id,prediction)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="metrics of predictions against a table")
    p.add_argument("--pred", required=True, help="predictions CSV (id,prediction)")
    p.add_argument("--table", required=True, help="feature table with survival_days")
    p.add_argument("--thresholds", type=_csv_floats, default=list(DEFAULT_THRESHOLDS))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("cv", parents=[common], help="k-fold cross-validation of a model")
    _model_opts(p)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("study", parents=[common], help="full train / CV / hold-out study from a config")
    p.add_argument("--out", help="override the config's output_dir")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("fuse", parents=[common], help="majority-vote label fusion")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weights", type=_csv_floats, default=None)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("postproc", parents=[common], help="rule-based clean-up of a label map")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-wt", type=int, default=500)
    p.add_argument("--min-et", type=int, default=50)
    p.add_argument("--et-floor", type=int, default=500)
    p.add_argument("--t1gd", help="T1Gd volume; enables the intensity filter")
    p.add_argument("--z-et", type=float, default=0.0)
    p.add_argument("--zscore-t1gd", action="store_true", help="z-score the T1Gd volume before filtering")
    p.add_argument("--connectivity", type=int, choices=(6, 26), default=26)
    p.set_defaults(func=cmd_postproc)

    p = sub.add_parser("segmetrics", parents=[common], help="Dice and Hausdorff distance per region")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--hd95", action="store_true", help="95th-percentile Hausdorff distance")
    p.set_defaults(func=cmd_segmetrics)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic cohort")
    p.add_argument("--spec", help="cohort spec JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=None, help="override n_subjects")
    p.set_defaults(func=cmd_synth)
    return parser


def _load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigurationError(f"{path}: config must be a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def _apply_config(parser, argv):
    """Parse ``argv`` with defaults taken from ``--config``; explicit flags win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    subparsers = parser._subparsers._group_actions[0].choices
    command = next((a for a in rest if not a.startswith("-")), None)
    if known.config is None or command not in subparsers or command == "study":
        return parser.parse_args(argv)
    cfg = _load_config(known.config)
    sub = subparsers[command]
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config", "func")}
    unknown = sorted(set(cfg) - set(actions))
    if unknown:
        raise ConfigurationError(f"unknown keys in {known.config} for '{command}': {unknown}")
    for dest in cfg:
        actions[dest].required = False
    sub.set_defaults(**cfg)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    command = "gliosurv"
    try:
        args = _apply_config(parser, argv)
        command = f"gliosurv {args.command}"
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        args.func(args)
        return EXIT_OK
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"{exc.prog or command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except StageError as exc:
        print(f"{command}: error: {exc}", file=sys.stderr)
        return EXIT_IO if isinstance(exc.__cause__, OSError) else EXIT_INVALID
    except OSError as exc:  # includes FormatError
        print(f"{command}: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (GliosurvError, ValueError, KeyError) as exc:
        sid = getattr(exc, "subject_id", None)
        where = f" [subject {sid}]" if sid else ""
        print(f"{command}: error{where}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
