"""End-to-end workflow: extract features, assemble the table, select, train and evaluate."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .ellipsoid import relative_invasiveness
from .evaluation import DEFAULT_THRESHOLDS, cross_validate, dumps_json, filter_gtr, format_reports, metrics
from .exceptions import (
    ConfigurationError,
    DegenerateInputError,
    DegenerateSubjectError,
    FormatError,
    GliosurvError,
    ShapeError,
)
from .models import (
    EpsilonSVR,
    LinearSurvivalRegressor,
    RandomForestSurvivalRegressor,
    estimator_from_dict,
    estimator_to_dict,
)
from .morphology import MORPH_FEATURES, morphology
from .nifti import read_volume
from .parallel import map_ordered
from .selection import FeatureSelector, SelectionReport
from .table import AGE, FeatureTable, read_cohort_csv
from .texture import TEXTURE_FEATURES, texture_features

RIC = "RIC"
DEFAULT_ROIS = ("WT", "TC")
MODEL_KINDS = ("baseline", "radiomics", "invasiveness")
MODEL_FORMAT = "gliosurv-model"
MODEL_VERSION = 1

MODEL_DEFAULTS = {
    "baseline": {},
    "radiomics": {"n_trees": 500, "min_leaf": 5, "mtry": None},
    "invasiveness": {"kernel": "rbf", "C": 100.0, "epsilon": 30.0, "gamma": "scale"},
}
SELECTION_DEFAULTS = {
    "threshold": 0.95,
    "sizes": None,
    "k": 5,
    "tie_tolerance": 1.0,
    "n_trees": 500,
    "one_at_a_time": False,
    "importance": "impurity",
    "features": None,
}


class StageError(GliosurvError):
    """A pipeline stage failed; ``stage`` names it and ``subjects`` lists affected ids."""

    def __init__(self, stage, message, subjects=()):
        self.stage = stage
        self.subjects = list(subjects)
        where = f" (subjects: {', '.join(self.subjects)})" if self.subjects else ""
        super().__init__(f"stage '{stage}' failed: {message}{where}")


def feature_names(rois=DEFAULT_ROIS, include_ric=True) -> list:
    """Stable column order: per ROI the 13 shape then 68 texture features, then RIC."""
    names = []
    for roi in rois:
        names += [f"{roi}_{nm}" for nm in MORPH_FEATURES]
        names += [f"{roi}_{nm}" for nm in TEXTURE_FEATURES]
    if include_ric:
        names.append(RIC)
    return names


def extract_all(vol, brain_ref=None, subject_id=None, rois=DEFAULT_ROIS, include_ric=True, radiomics=True) -> dict:
    """Named feature vector of one structure map (ordered as :func:`feature_names`).

    Degenerate or empty ROIs raise :class:`DegenerateSubjectError` with ``subject_id``.
    """
    out = {}
    try:
        if radiomics:
            for roi in rois:
                out.update(morphology(vol, roi, brain_ref).as_dict(roi))
                out.update(texture_features(vol, roi).as_dict(roi))
        if include_ric:
            out[RIC] = relative_invasiveness(vol, subject_id=subject_id).ric
    except DegenerateSubjectError:
        raise
    except DegenerateInputError as exc:
        raise DegenerateSubjectError(str(exc), subject_id) from exc
    return out


def find_subjects(root) -> list:
    """``(subject_id, seg_path)`` for every ``<root>/<id>/seg.nii[.gz]``, sorted by id."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"cohort directory {root} does not exist")
    found = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        for name in ("seg.nii.gz", "seg.nii"):
            if (sub / name).is_file():
                found.append((sub.name, sub / name))
                break
    return found


def extract_cohort(root, rois=DEFAULT_ROIS, radiomics=True, n_jobs=1):
    """Feature table for a cohort directory plus a list of ``(subject_id, reason)`` failures.

    Clinical columns come from ``<root>/cohort.csv`` when present.  Subjects
    whose extraction fails are left out and reported instead of aborting.
    """
    root = Path(root)
    subjects = find_subjects(root)
    clinical = read_cohort_csv(root / "cohort.csv") if (root / "cohort.csv").is_file() else {}
    names = feature_names(rois) if radiomics else [RIC]

    def _one(item):
        sid, path = item
        try:
            vol = read_volume(path, kind="label")
            feats = extract_all(vol, subject_id=sid, rois=rois, radiomics=radiomics)
            return sid, [feats[nm] for nm in names], None
        except (GliosurvError, OSError) as exc:
            return sid, None, f"{type(exc).__name__}: {exc}"

    rows, failures = [], []
    for sid, vec, err in map_ordered(_one, subjects, n_jobs=n_jobs):
        if err is None:
            rows.append((sid, vec))
        else:
            failures.append((sid, err))
    ids = [sid for sid, _ in rows]
    meta = [clinical.get(sid, {}) for sid in ids]
    table = FeatureTable(
        ids,
        names,
        np.asarray([v for _, v in rows], dtype=np.float64).reshape(len(rows), len(names)),
        targets=[m.get("survival_days", np.nan) for m in meta],
        age=[m.get("age", np.nan) for m in meta],
        resection_status=[m.get("resection_status", "NA") for m in meta],
    )
    table.notes["failures"] = failures
    return table, failures


def _radiomic_candidates(names):
    return [nm for nm in names if nm not in (AGE, RIC)]


class PrognosticModel(RegressorMixin, BaseEstimator):
    """One of the three survival models, operating on named columns.

    ``feature_names`` names the columns of the ``X`` passed to ``fit`` and
    ``predict`` (``"age"`` included).  ``baseline`` regresses on age alone by
    least squares; ``invasiveness`` fits an epsilon-SVR on age and RIC;
    ``radiomics`` prunes correlated features, picks a subset by RFE (age and
    RIC excluded from the candidates) and fits a random forest on that subset
    plus age.  Supplying ``selection={"features": [...]}`` skips the selection.
    """

    def __init__(self, kind="invasiveness", feature_names=None, params=None, selection=None, seed=0, n_jobs=1):
        self.kind = kind
        self.feature_names = feature_names
        self.params = params
        self.selection = selection
        self.seed = seed
        self.n_jobs = n_jobs

    def _names(self, p):
        if self.feature_names is None:
            raise ConfigurationError("PrognosticModel needs feature_names naming the columns of X")
        names = list(self.feature_names)
        if len(names) != p:
            raise ShapeError(f"X has {p} columns but {len(names)} feature names were given")
        return names

    def _make_estimator(self):
        params = {**MODEL_DEFAULTS[self.kind], **(self.params or {})}
        if self.kind == "baseline":
            return LinearSurvivalRegressor(**params)
        if self.kind == "invasiveness":
            return EpsilonSVR(**params)
        return RandomForestSurvivalRegressor(**params, seed=self.seed, n_jobs=self.n_jobs)

    def fit(self, X, y):
        if self.kind not in MODEL_KINDS:
            raise ConfigurationError(f"model kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        names = self._names(X.shape[1])
        sel = {**SELECTION_DEFAULTS, **(self.selection or {})}
        unknown = sorted(set(sel) - set(SELECTION_DEFAULTS))
        if unknown:
            raise ConfigurationError(f"unknown selection options: {unknown}")
        report = None
        if self.kind == "baseline":
            inputs = [AGE]
        elif self.kind == "invasiveness":
            inputs = [AGE, RIC]
        elif sel["features"] is not None:
            inputs = [nm for nm in sel["features"] if nm != AGE] + [AGE]
        else:
            cand = _radiomic_candidates(names)
            if not cand:
                raise ConfigurationError("radiomics model needs radiomic feature columns")
            selector = FeatureSelector(
                threshold=sel["threshold"],
                estimator=RandomForestSurvivalRegressor(n_trees=sel["n_trees"], n_jobs=self.n_jobs),
                sizes=sel["sizes"],
                k=sel["k"],
                seed=self.seed,
                tie_tolerance=sel["tie_tolerance"],
                n_jobs=1,
                one_at_a_time=sel["one_at_a_time"],
                importance=sel["importance"],
            )
            cols = [names.index(nm) for nm in cand]
            selector.fit(X[:, cols], y, feature_names=cand)
            report = selector.report_
            inputs = list(selector.selected_) + [AGE]
        missing = [nm for nm in inputs if nm not in names]
        if missing:
            raise ConfigurationError(f"{self.kind} model needs columns {missing}")
        self.inputs_ = inputs
        self.input_index_ = np.asarray([names.index(nm) for nm in inputs], dtype=np.int64)
        self.estimator_ = self._make_estimator().fit(X[:, self.input_index_], y)
        self.selection_report_ = report
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "estimator_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ShapeError(f"X has {X.shape[1]} columns, model expects {self.n_features_in_}")
        return self.estimator_.predict(X[:, self.input_index_])

    # table conveniences -------------------------------------------------
    def fit_table(self, table: FeatureTable):
        names, X = table.all_columns()
        self.set_params(feature_names=names)
        return self.fit(X, table.require_targets())

    def predict_table(self, table: FeatureTable) -> np.ndarray:
        check_is_fitted(self, "estimator_")
        return self.estimator_.predict(table.design(self.inputs_))

    def to_dict(self) -> dict:
        check_is_fitted(self, "estimator_")
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": self.kind,
            "params": self.params,
            "selection": self.selection,
            "seed": self.seed,
            "feature_names": list(self.feature_names),
            "inputs": list(self.inputs_),
            "estimator": estimator_to_dict(self.estimator_),
            "selection_report": None if self.selection_report_ is None else self.selection_report_.to_dict(),
        }

    def to_json(self) -> str:
        return dumps_json(self.to_dict())

    @classmethod
    def from_dict(cls, d) -> "PrognosticModel":
        if d.get("format") != MODEL_FORMAT:
            raise FormatError("not a gliosurv model document")
        if d.get("version") != MODEL_VERSION:
            raise FormatError(f"unsupported model version {d.get('version')}")
        m = cls(d["kind"], d["feature_names"], d["params"], d["selection"], d["seed"])
        m.inputs_ = list(d["inputs"])
        m.input_index_ = np.asarray([m.feature_names.index(nm) for nm in m.inputs_], dtype=np.int64)
        m.estimator_ = estimator_from_dict(d["estimator"])
        rep = d.get("selection_report")
        m.selection_report_ = None if rep is None else SelectionReport.from_dict(rep)
        m.n_features_in_ = len(m.feature_names)
        return m

    @classmethod
    def from_json(cls, text) -> "PrognosticModel":
        try:
            return cls.from_dict(json.loads(text))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"malformed model document: {exc}") from exc


def cross_validate_table(model: PrognosticModel, table: FeatureTable, k=10, seed=0, n_jobs=1,
                         thresholds=DEFAULT_THRESHOLDS):
    """k-fold CV of ``model`` on ``table``; feature selection is redone inside every fold."""
    names, X = table.all_columns()
    est = model.set_params(feature_names=names)
    return cross_validate(est, X, table.require_targets(), k=k, seed=seed, n_jobs=n_jobs, thresholds=thresholds)


@dataclass
class PipelineConfig:
    """Study settings, loadable from JSON.  ``seed`` is mandatory."""

    seed: int
    output_dir: str
    cohort_dir: str = None
    feature_table: str = None
    holdout_dir: str = None
    holdout_table: str = None
    holdout_fraction: float = 0.0
    rois: list = field(default_factory=lambda: list(DEFAULT_ROIS))
    radiomics: bool = True
    gtr_only: bool = True
    models: list = field(default_factory=lambda: list(MODEL_KINDS))
    model_params: dict = field(default_factory=dict)
    selection: dict = field(default_factory=dict)
    cv_k: int = 10
    thresholds: list = field(default_factory=lambda: list(DEFAULT_THRESHOLDS))
    n_jobs: int = 1

    def __post_init__(self):
        if self.seed is None:
            raise ConfigurationError("config needs a seed")
        if (self.cohort_dir is None) == (self.feature_table is None):
            raise ConfigurationError("config needs exactly one of cohort_dir or feature_table")
        bad = [m for m in self.models if m not in MODEL_KINDS]
        if bad:
            raise ConfigurationError(f"unknown model kinds {bad}")
        if not 0 <= self.holdout_fraction < 1:
            raise ConfigurationError("holdout_fraction must lie in [0, 1)")
        if sum(x is not None for x in (self.holdout_dir, self.holdout_table)) + (self.holdout_fraction > 0) > 1:
            raise ConfigurationError("use at most one of holdout_dir, holdout_table, holdout_fraction")
        unknown = sorted(set(self.model_params) - set(MODEL_KINDS))
        if unknown:
            raise ConfigurationError(f"model_params has unknown model kinds {unknown}")

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        unknown = sorted(set(raw) - set(cls.__dataclass_fields__))
        if unknown:
            raise ConfigurationError(f"unknown config keys: {unknown}")
        if "seed" not in raw:
            raise ConfigurationError("config needs a seed")
        if "output_dir" not in raw:
            raise ConfigurationError("config needs an output_dir")
        return cls(**raw)

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigurationError(f"{path}: config must be a JSON object")
        base = Path(path).parent
        for key in ("output_dir", "cohort_dir", "feature_table", "holdout_dir", "holdout_table"):
            if raw.get(key) is not None and not Path(raw[key]).is_absolute():
                raw[key] = str(base / raw[key])
        return cls.from_dict(raw)


@dataclass
class StudyResult:
    reports: dict
    failures: list
    models: dict

    def table_text(self) -> str:
        rows = []
        for kind, reps in self.reports.items():
            for split, rep in reps.items():
                rows.append((f"{kind} {split}", rep))
        return format_reports(rows)

    def to_dict(self) -> dict:
        return {
            "reports": {k: {s: r.to_dict() for s, r in v.items()} for k, v in self.reports.items()},
            "failures": [list(f) for f in self.failures],
        }


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except (GliosurvError, OSError, ValueError) as exc:
        subjects = [exc.subject_id] if getattr(exc, "subject_id", None) else []
        raise StageError(name, str(exc), subjects) from exc


def _load_table(cohort_dir, table_path, cfg, label):
    if table_path is not None:
        return FeatureTable.from_csv(table_path), []
    return extract_cohort(cohort_dir, rois=cfg.rois, radiomics=cfg.radiomics, n_jobs=cfg.n_jobs)


def run_study(cfg: PipelineConfig) -> StudyResult:
    """Train / cross-validate / hold-out evaluate every configured model and persist artifacts."""
    out = Path(cfg.output_dir)
    _stage("setup", out.mkdir, parents=True, exist_ok=True)
    table, failures = _stage("extract", _load_table, cfg.cohort_dir, cfg.feature_table, cfg, "training")
    _stage("extract", table.to_csv, out / "features.csv")
    holdout = None
    if cfg.holdout_dir is not None or cfg.holdout_table is not None:
        holdout, more = _stage("extract-holdout", _load_table, cfg.holdout_dir, cfg.holdout_table, cfg, "holdout")
        failures = failures + more
        _stage("extract-holdout", holdout.to_csv, out / "holdout_features.csv")
    if cfg.gtr_only:
        table = filter_gtr(table)
        if holdout is not None:
            holdout = filter_gtr(holdout)
    if cfg.holdout_fraction > 0:
        perm = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1])).permutation(len(table))
        n_hold = int(round(cfg.holdout_fraction * len(table)))
        holdout = table.subset_rows(np.sort(perm[:n_hold]))
        table = table.subset_rows(np.sort(perm[n_hold:]))
    if len(table) < cfg.cv_k:
        raise StageError("split", f"{len(table)} training subjects is fewer than cv_k={cfg.cv_k}")
    thresholds = tuple(cfg.thresholds)

    reports, models = {}, {}
    for kind in cfg.models:
        model = PrognosticModel(kind, params=cfg.model_params.get(kind), selection=cfg.selection or None,
                                seed=cfg.seed, n_jobs=cfg.n_jobs)
        _stage(f"train:{kind}", model.fit_table, table)
        y = table.require_targets()
        rep = {"train": _stage(f"train:{kind}", metrics, model.predict_table(table), y, thresholds)}
        cv_model = PrognosticModel(kind, params=cfg.model_params.get(kind), selection=cfg.selection or None,
                                   seed=cfg.seed, n_jobs=cfg.n_jobs)
        rep["cv"] = _stage(f"cv:{kind}", cross_validate_table, cv_model, table, cfg.cv_k, cfg.seed, 1, thresholds)
        if holdout is not None and len(holdout) >= 2 and not np.any(np.isnan(holdout.targets)):
            rep["holdout"] = _stage(f"holdout:{kind}", metrics, model.predict_table(holdout), holdout.targets,
                                    thresholds)
        reports[kind] = rep
        models[kind] = model
        _stage(f"save:{kind}", (out / f"model_{kind}.json").write_text, model.to_json() + "\n")
        if model.selection_report_ is not None:
            _stage(f"save:{kind}", (out / "selection.json").write_text, model.selection_report_.to_json() + "\n")
    result = StudyResult(reports, failures, models)
    _stage("report", (out / "report.json").write_text, dumps_json(result.to_dict()) + "\n")
    _stage("report", (out / "report.txt").write_text, result.table_text() + "\n")
    # where the run was written and how many threads it used do not change its results
    persisted = {k: v for k, v in asdict(cfg).items() if k not in ("n_jobs", "output_dir")}
    _stage("report", (out / "config.json").write_text, dumps_json(persisted) + "\n")
    return result
