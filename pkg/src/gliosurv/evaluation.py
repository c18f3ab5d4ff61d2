"""Survival binning, regression metrics and k-fold cross-validation."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata
from sklearn.base import clone

from .exceptions import ConfigurationError, ShapeError, ValidationError
from .parallel import map_ordered

SURVIVAL_CLASSES = ("short", "intermediate", "long")
DEFAULT_THRESHOLDS = (300.0, 450.0)


class UndefinedCorrelationWarning(UserWarning):
    """A correlation was requested for a constant input."""


class EmptySelectionWarning(UserWarning):
    """A filter removed every subject."""


def _check_thresholds(thresholds):
    lo, hi = (float(t) for t in thresholds)
    if not lo < hi:
        raise ConfigurationError(f"survival thresholds must satisfy low < high, got {thresholds}")
    return lo, hi


def survival_class_codes(days, thresholds=DEFAULT_THRESHOLDS) -> np.ndarray:
    """0 = short, 1 = intermediate, 2 = long.  Values equal to a threshold are intermediate."""
    lo, hi = _check_thresholds(thresholds)
    days = np.asarray(days, dtype=np.float64)
    if np.any(np.isnan(days)):
        raise ValidationError("survival days contain NaN")
    if np.any(days < 0):
        raise ValidationError(f"survival days must be >= 0, got {days[days < 0][:5].tolist()}")
    return np.where(days < lo, 0, np.where(days > hi, 2, 1))


def classify_survival(days, thresholds=DEFAULT_THRESHOLDS):
    """Three-way survival class name for a scalar, or an array of names."""
    codes = survival_class_codes(days, thresholds)
    if codes.ndim == 0:
        return SURVIVAL_CLASSES[int(codes)]
    return np.asarray(SURVIVAL_CLASSES, dtype=object)[codes]


def _corr(a, b):
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    if den == 0.0:
        return math.nan
    return float(np.clip((a @ b) / den, -1.0, 1.0))


@dataclass
class EvalReport:
    accuracy: float
    mse: float
    mse_median: float
    spearman_rho: float
    pearson_r: float
    n: int
    per_fold: list = None
    warnings: list = field(default_factory=list)
    predictions: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        d = {
            "accuracy": self.accuracy,
            "mse": self.mse,
            "mse_median": self.mse_median,
            "spearman_rho": self.spearman_rho,
            "pearson_r": self.pearson_r,
            "n": self.n,
        }
        if self.per_fold is not None:
            d["per_fold"] = [f.to_dict() for f in self.per_fold]
        if self.warnings:
            d["warnings"] = list(self.warnings)
        return d

    def to_json(self) -> str:
        return dumps_json(self.to_dict())


def _metrics(pred, truth, thresholds, warn=True) -> EvalReport:
    notes = []
    err2 = (pred - truth) ** 2
    acc = float(np.mean(survival_class_codes(np.clip(pred, 0, None), thresholds) == survival_class_codes(truth, thresholds)))
    if len(pred) >= 2:
        r = _corr(pred, truth)
        rho = _corr(rankdata(pred), rankdata(truth))
    else:
        r = rho = math.nan
    if math.isnan(r) or math.isnan(rho):
        msg = "correlation undefined (constant input or fewer than 2 samples); reported as NaN"
        notes.append(msg)
        if warn:
            warnings.warn(msg, UndefinedCorrelationWarning, stacklevel=3)
    return EvalReport(
        accuracy=acc,
        mse=float(err2.mean()),
        mse_median=float(np.median(err2)),
        spearman_rho=rho,
        pearson_r=r,
        n=int(len(pred)),
        warnings=notes,
    )


def metrics(pred, truth, thresholds=DEFAULT_THRESHOLDS) -> EvalReport:
    """3-class accuracy, MSE, median squared error, Spearman rho and Pearson r.

    Predictions below zero are clamped to 0 days for the class comparison only.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.shape != truth.shape:
        raise ShapeError(f"pred has {pred.size} values, truth has {truth.size}")
    if pred.size < 2:
        raise ValidationError("metrics need at least 2 subjects")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(truth))):
        raise ValidationError("pred and truth must be finite")
    return _metrics(pred, truth, thresholds)


def kfold_indices(n: int, k: int, seed=0) -> list:
    """Shuffled k-fold partition of ``range(n)``; fold sizes differ by at most one."""
    if k < 2:
        raise ConfigurationError(f"k must be >= 2, got {k}")
    if k > n:
        raise ConfigurationError(f"cannot make {k} folds from {n} subjects")
    perm = np.random.default_rng(np.random.SeedSequence(seed)).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def fold_seeds(seed, k: int) -> list:
    """Fixed per-fold seeds so fold ``i`` trains identically however folds are scheduled."""
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in np.random.SeedSequence(seed).spawn(k)]


def cross_validate(estimator, X, y, k=10, seed=0, n_jobs=1, thresholds=DEFAULT_THRESHOLDS) -> EvalReport:
    """Out-of-fold predictions from ``k`` clones of ``estimator``.

    Estimators exposing a ``seed`` parameter get a distinct, fixed seed per
    fold.  Headline metrics pool all out-of-fold predictions; ``per_fold``
    holds the metrics of each fold.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise ShapeError(f"X has {X.shape[0]} rows, y has {y.shape[0]}")
    folds = kfold_indices(len(y), k, seed)
    seeds = fold_seeds(seed, k)
    has_seed = "seed" in estimator.get_params()

    def _run(i):
        test = folds[i]
        train = np.setdiff1d(np.arange(len(y)), test)
        est = clone(estimator)
        if has_seed:
            est.set_params(seed=seeds[i])
        est.fit(X[train], y[train])
        return test, np.asarray(est.predict(X[test]), dtype=np.float64)

    oof = np.empty_like(y)
    per_fold = []
    for test, pred in map_ordered(_run, range(k), n_jobs=n_jobs):
        oof[test] = pred
        per_fold.append(_metrics(pred, y[test], thresholds, warn=False))
    report = _metrics(oof, y, thresholds)
    report.per_fold = per_fold
    report.predictions = oof
    return report


def filter_gtr(table):
    """Rows of ``table`` whose resection status is GTR (warns when none remain)."""
    keep = [i for i, s in enumerate(table.resection_status) if s == "GTR"]
    if not keep:
        warnings.warn("no GTR subjects left after filtering", EmptySelectionWarning, stacklevel=2)
    return table.subset_rows(np.asarray(keep, dtype=np.int64))


def _sanitise(obj):
    if isinstance(obj, float) or isinstance(obj, np.floating):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return [_sanitise(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {str(k): _sanitise(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitise(v) for v in obj]
    return obj


def dumps_json(obj, indent=2) -> str:
    """Strict JSON: NaN becomes ``null`` and infinities become the strings ``"inf"`` / ``"-inf"``."""
    return json.dumps(_sanitise(obj), indent=indent, sort_keys=False, allow_nan=False)


def format_reports(rows) -> str:
    """Aligned text table; ``rows`` is a list of ``(label, EvalReport)``."""
    header = ("", "Accuracy", "MSE", "mSE", "rho")
    lines = []
    for label, rep in rows:
        lines.append(
            (
                str(label),
                f"{rep.accuracy:.2f}",
                f"{rep.mse:.0f}",
                f"{rep.mse_median:.0f}",
                "nan" if math.isnan(rep.spearman_rho) else f"{rep.spearman_rho:.2f}",
            )
        )
    widths = [max(len(r[i]) for r in [header, *lines]) for i in range(len(header))]
    out = []
    for r in [header, *lines]:
        out.append("  ".join(c.ljust(widths[0]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(r)))
    return "\n".join(out)
