"""Correlation pruning and recursive feature elimination driven by random-forest importances."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin, clone
from sklearn.feature_selection import SelectorMixin
from sklearn.inspection import permutation_importance
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .evaluation import dumps_json, fold_seeds, kfold_indices
from .exceptions import ConfigurationError, ValidationError
from .models import RandomForestSurvivalRegressor
from .parallel import map_ordered

DEFAULT_SIZES = (2, 4, 6, 8, 10, 15, 20, 30, 50)
IMPORTANCES = ("impurity", "permutation")


def _names(feature_names, p):
    if feature_names is None:
        return [f"x{i}" for i in range(p)]
    names = [str(f) for f in feature_names]
    if len(names) != p:
        raise ValidationError(f"{len(names)} feature names for {p} columns")
    return names


def _abs_correlation(X):
    """|Pearson r| between columns (NaN rows/cols for constant columns) and the signed matrix."""
    Xc = X - X.mean(axis=0)
    norm = np.sqrt((Xc**2).sum(axis=0))
    const = norm <= 1e-12 * np.maximum(1.0, np.abs(X).max(axis=0))
    safe = np.where(const, 1.0, norm)
    R = (Xc / safe).T @ (Xc / safe)
    np.clip(R, -1.0, 1.0, out=R)
    R[const, :] = np.nan
    R[:, const] = np.nan
    return R, const


class CorrelationPruner(SelectorMixin, BaseEstimator):
    """Greedy removal of one feature from every pair with ``|r| > threshold``.

    Pairs are visited in column order.  Of a correlated pair the feature with the
    larger mean absolute correlation to all other features is removed (the later
    column on a tie).  Constant columns correlate with nothing: they are kept
    and listed in ``constant_``.
    """

    def __init__(self, threshold=0.95):
        self.threshold = threshold

    def fit(self, X, y=None, feature_names=None):
        X = check_array(X, dtype=np.float64)
        n, p = X.shape
        if n < 2:
            raise ValidationError("correlation pruning needs at least 2 subjects")
        if not 0 <= self.threshold <= 1:
            raise ConfigurationError(f"threshold must lie in [0, 1], got {self.threshold}")
        names = _names(feature_names, p)
        R, const = _abs_correlation(X)
        A = np.abs(R)
        off = A.copy()
        np.fill_diagonal(off, np.nan)
        with np.errstate(invalid="ignore"):
            counts = np.sum(~np.isnan(off), axis=1)
            mean_abs = np.where(counts > 0, np.nansum(off, axis=1) / np.maximum(counts, 1), 0.0)
        keep = np.ones(p, dtype=bool)
        removed = []
        for i in range(p):
            if not keep[i] or const[i]:
                continue
            for j in range(i + 1, p):
                if not keep[j] or const[j] or not A[i, j] > self.threshold:
                    continue
                drop, stay = (i, j) if mean_abs[i] > mean_abs[j] else (j, i)
                keep[drop] = False
                removed.append((names[stay], names[drop], float(R[i, j])))
                if drop == i:
                    break
        self.support_mask_ = keep
        self.removed_ = removed
        self.constant_ = [names[i] for i in np.flatnonzero(const)]
        self.feature_names_ = np.asarray(names, dtype=object)
        self.n_features_in_ = p
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "support_mask_")
        return self.support_mask_

    @property
    def selected_names_(self):
        return [str(nm) for nm, k in zip(self.feature_names_, self.support_mask_) if k]


def prune_correlated(table, threshold=0.95):
    """Apply :class:`CorrelationPruner` to a FeatureTable; returns ``(pruned_table, pruner)``."""
    pruner = CorrelationPruner(threshold).fit(table.values, feature_names=table.feature_names)
    return table.subset_features(pruner.selected_names_), pruner


def resolve_sizes(sizes, p) -> list:
    """Ascending candidate subset sizes; the default grid is clipped to ``p`` and always includes ``p``."""
    if p < 1:
        raise ConfigurationError("no features to select from")
    if sizes is None:
        out = {s for s in DEFAULT_SIZES if s <= p} | {p}
    else:
        out = {int(s) for s in sizes}
        if not out:
            raise ConfigurationError("sizes must be nonempty")
        if min(out) < 1:
            raise ConfigurationError(f"subset sizes must be >= 1, got {sorted(out)}")
        too_big = sorted(s for s in out if s > p)
        if too_big:
            raise ConfigurationError(f"subset sizes {too_big} exceed the {p} available features")
    return sorted(out)


def _importance(est, X, y, kind, seed):
    if kind == "impurity":
        return np.asarray(est.feature_importances_, dtype=np.float64)
    res = permutation_importance(est, X, y, scoring="neg_mean_squared_error", n_repeats=5, random_state=seed % 2**32)
    return np.clip(res.importances_mean, 0.0, None)


def _eliminate(estimator, X, y, sizes, seed, X_test=None, y_test=None, importance="impurity"):
    """Recursive elimination down the size grid; re-ranks after every refit.

    Returns ``{size: (active_indices, fitted_estimator, rmse_or_None, importances)}``.
    """
    active = np.arange(X.shape[1])
    out = {}
    prev_imp = None
    for size in sorted(sizes, reverse=True):
        if prev_imp is not None and size < len(active):
            order = np.argsort(-prev_imp, kind="stable")
            active = np.sort(active[order[:size]])
        est = clone(estimator)
        if "seed" in est.get_params():
            est.set_params(seed=seed)
        est.fit(X[:, active], y)
        rmse = None
        if X_test is not None:
            rmse = float(np.sqrt(np.mean((est.predict(X_test[:, active]) - y_test) ** 2)))
        prev_imp = _importance(est, X[:, active], y, importance, seed)
        out[size] = (active.copy(), est, rmse, prev_imp)
    return out


@dataclass
class SelectionReport:
    removed_correlated: list = field(default_factory=list)
    constant_features: list = field(default_factory=list)
    ranking: list = field(default_factory=list)
    selected: list = field(default_factory=list)
    cv_curve: dict = field(default_factory=dict)
    cv_se: dict = field(default_factory=dict)
    optimal_size: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["removed_correlated"] = [list(t) for t in self.removed_correlated]
        d["ranking"] = [[nm, imp] for nm, imp in self.ranking]
        d["cv_curve"] = {str(k): v for k, v in self.cv_curve.items()}
        d["cv_se"] = {str(k): v for k, v in self.cv_se.items()}
        return d

    def to_json(self) -> str:
        return dumps_json(self.to_dict())

    @classmethod
    def from_dict(cls, d) -> "SelectionReport":
        return cls(
            removed_correlated=[tuple(t) for t in d.get("removed_correlated", [])],
            constant_features=list(d.get("constant_features", [])),
            ranking=[(nm, float(v)) for nm, v in d.get("ranking", [])],
            selected=list(d.get("selected", [])),
            cv_curve={int(k): v for k, v in d.get("cv_curve", {}).items()},
            cv_se={int(k): v for k, v in d.get("cv_se", {}).items()},
            optimal_size=int(d.get("optimal_size", 0)),
        )

    @classmethod
    def from_json(cls, text) -> "SelectionReport":
        return cls.from_dict(json.loads(text))


class RFESelector(SelectorMixin, BaseEstimator):
    """Recursive feature elimination with cross-validated subset size.

    Inside each of ``k`` folds a forest is fitted on all features, features are
    ranked by impurity importance, the lowest-ranked are dropped to the next
    candidate size, and the forest is refitted and re-ranked, recording the
    hold-out RMSE at every size.  The chosen size is the smallest one whose mean
    CV RMSE is within ``tie_tolerance`` standard errors of the best mean
    (``tie_tolerance=0`` keeps only exact ties).  The elimination is then
    repeated on all data down to that size.

    ``one_at_a_time=True`` replaces the size grid by every size from ``p``
    down to 1.  ``importance="permutation"`` ranks by the training-set MSE
    increase under column permutation instead of impurity decrease.
    """

    def __init__(self, estimator=None, sizes=None, k=5, seed=0, tie_tolerance=1.0, n_jobs=1,
                 one_at_a_time=False, importance="impurity"):
        self.estimator = estimator
        self.sizes = sizes
        self.k = k
        self.seed = seed
        self.tie_tolerance = tie_tolerance
        self.n_jobs = n_jobs
        self.one_at_a_time = one_at_a_time
        self.importance = importance

    def _base(self):
        est = self.estimator if self.estimator is not None else RandomForestSurvivalRegressor()
        if self.importance == "impurity" and not hasattr(type(est), "feature_importances_"):
            raise ConfigurationError("RFE needs an estimator exposing feature_importances_")
        return est

    def fit(self, X, y, feature_names=None):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        n, p = X.shape
        if self.tie_tolerance < 0:
            raise ConfigurationError("tie_tolerance must be >= 0")
        if self.importance not in IMPORTANCES:
            raise ConfigurationError(f"importance must be one of {IMPORTANCES}, got {self.importance!r}")
        names = _names(feature_names, p)
        sizes = list(range(1, p + 1)) if self.one_at_a_time else resolve_sizes(self.sizes, p)
        base = self._base()
        folds = kfold_indices(n, self.k, self.seed)
        seeds = fold_seeds(self.seed, self.k + 1)

        def _fold(i):
            test = folds[i]
            train = np.setdiff1d(np.arange(n), test)
            res = _eliminate(base, X[train], y[train], sizes, seeds[i], X[test], y[test], self.importance)
            return {s: r[2] for s, r in res.items()}

        per_fold = map_ordered(_fold, range(self.k), n_jobs=self.n_jobs)
        curve = {s: float(np.mean([f[s] for f in per_fold])) for s in sizes}
        se = {s: float(np.std([f[s] for f in per_fold], ddof=1) / np.sqrt(self.k)) for s in sizes}
        best = min(sizes, key=lambda s: (curve[s], s))
        limit = curve[best] + self.tie_tolerance * se[best]
        chosen = min(s for s in sizes if curve[s] <= limit)

        final = _eliminate(base, X, y, [s for s in sizes if s >= chosen], seeds[self.k], importance=self.importance)
        active, est, _, imp = final[chosen]
        top = imp.max()
        scaled = imp / top * 100.0 if top > 0 else np.zeros_like(imp)
        order = np.argsort(-scaled, kind="stable")
        mask = np.zeros(p, dtype=bool)
        mask[active] = True

        self.support_mask_ = mask
        self.ranking_ = [(names[active[i]], float(scaled[i])) for i in order]
        self.selected_ = [nm for nm, _ in self.ranking_]
        self.cv_curve_ = curve
        self.cv_se_ = se
        self.cv_folds_ = per_fold
        self.optimal_size_ = chosen
        self.estimator_ = est
        self.feature_names_ = np.asarray(names, dtype=object)
        self.n_features_in_ = p
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "support_mask_")
        return self.support_mask_

    def report(self, pruner=None) -> SelectionReport:
        check_is_fitted(self, "support_mask_")
        return SelectionReport(
            removed_correlated=list(pruner.removed_) if pruner is not None else [],
            constant_features=list(pruner.constant_) if pruner is not None else [],
            ranking=list(self.ranking_),
            selected=list(self.selected_),
            cv_curve=dict(self.cv_curve_),
            cv_se=dict(self.cv_se_),
            optimal_size=int(self.optimal_size_),
        )


class FeatureSelector(TransformerMixin, BaseEstimator):
    """Correlation pruning followed by RFE, as one fit/transform step."""

    def __init__(self, threshold=0.95, estimator=None, sizes=None, k=5, seed=0, tie_tolerance=1.0, n_jobs=1,
                 one_at_a_time=False, importance="impurity"):
        self.threshold = threshold
        self.estimator = estimator
        self.sizes = sizes
        self.k = k
        self.seed = seed
        self.tie_tolerance = tie_tolerance
        self.n_jobs = n_jobs
        self.one_at_a_time = one_at_a_time
        self.importance = importance

    def fit(self, X, y, feature_names=None):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        names = _names(feature_names, X.shape[1])
        self.pruner_ = CorrelationPruner(self.threshold).fit(X, feature_names=names)
        kept = self.pruner_.get_support(indices=True)
        sizes = self.sizes
        if sizes is not None:
            sizes = [s for s in sizes if s <= len(kept)] or [len(kept)]
        self.rfe_ = RFESelector(self.estimator, sizes, self.k, self.seed, self.tie_tolerance, self.n_jobs,
                                self.one_at_a_time, self.importance)
        self.rfe_.fit(X[:, kept], y, feature_names=[names[i] for i in kept])
        self.selected_ = list(self.rfe_.selected_)
        self.selected_indices_ = np.asarray([names.index(nm) for nm in self.selected_], dtype=np.int64)
        self.report_ = self.rfe_.report(self.pruner_)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "selected_indices_")
        X = check_array(X, dtype=np.float64)
        return X[:, self.selected_indices_]


def select_features(table, threshold=0.95, estimator=None, sizes=None, k=5, seed=0, tie_tolerance=1.0, n_jobs=1,
                    one_at_a_time=False, importance="impurity"):
    """Prune and RFE-select the feature columns of ``table`` against its survival targets."""
    y = table.require_targets()
    sel = FeatureSelector(threshold, estimator, sizes, k, seed, tie_tolerance, n_jobs, one_at_a_time, importance)
    sel.fit(table.values, y, feature_names=table.feature_names)
    return sel.report_
