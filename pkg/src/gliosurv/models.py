"""Survival regressors: ordinary least squares, random forest and epsilon-SVR.

All three follow the scikit-learn estimator protocol (``fit`` / ``predict`` /
``get_params``) so they can sit inside pipelines and be cloned for
cross-validation.  Each also round-trips through a plain ``dict`` for JSON
persistence.
"""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import _kernels
from .exceptions import ConfigurationError, ConvergenceError, ShapeError, SingularDesignError
from .parallel import map_ordered

MODEL_FORMAT_VERSION = 1


def _check_predict_input(est, X):
    X = check_array(X, dtype=np.float64)
    if X.shape[1] != est.n_features_in_:
        raise ShapeError(f"X has {X.shape[1]} columns, model was fitted with {est.n_features_in_}")
    return X


def _check_fit_input(X, y):
    try:
        return check_X_y(X, y, dtype=np.float64, y_numeric=True)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc


class LinearSurvivalRegressor(RegressorMixin, BaseEstimator):
    """Ordinary least squares with an intercept.

    Solved through a QR decomposition of the centred design; raises
    :class:`SingularDesignError` when the design is rank deficient or
    ``n <= p``.
    """

    def __init__(self, rcond=1e-10):
        self.rcond = rcond

    def fit(self, X, y):
        X, y = _check_fit_input(X, y)
        n, p = X.shape
        if n <= p:
            raise SingularDesignError(f"need more samples than predictors (n={n}, p={p})")
        design = np.hstack([np.ones((n, 1)), X])
        q, r = np.linalg.qr(design)
        diag = np.abs(np.diag(r))
        if diag.min() <= self.rcond * max(diag.max(), 1.0):
            raise SingularDesignError("design matrix is rank deficient")
        beta = np.linalg.solve(r, q.T @ y)
        self.intercept_ = float(beta[0])
        self.coef_ = beta[1:]
        self.n_features_in_ = p
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = _check_predict_input(self, X)
        return X @ self.coef_ + self.intercept_

    def to_dict(self):
        check_is_fitted(self, "coef_")
        return {
            "params": self.get_params(),
            "intercept": self.intercept_,
            "coef": self.coef_.tolist(),
            "n_features_in": self.n_features_in_,
        }

    @classmethod
    def from_dict(cls, d):
        est = cls(**d["params"])
        est.intercept_ = float(d["intercept"])
        est.coef_ = np.asarray(d["coef"], dtype=np.float64)
        est.n_features_in_ = int(d["n_features_in"])
        return est


class RegressionTree:
    """Fitted CART tree stored as flat node arrays (``feature == -1`` marks a leaf)."""

    __slots__ = ("feature", "threshold", "left", "right", "value", "n_node", "gain")

    def __init__(self, feature, threshold, left, right, value, n_node, gain):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)
        self.n_node = np.asarray(n_node, dtype=np.int64)
        self.gain = np.asarray(gain, dtype=np.float64)

    @property
    def n_nodes(self):
        return len(self.feature)

    def predict(self, X):
        return _kernels.predict_tree(X, self.feature, self.threshold, self.left, self.right, self.value)

    def to_dict(self):
        return {name: getattr(self, name).tolist() for name in self.__slots__}

    @classmethod
    def from_dict(cls, d):
        return cls(**{name: d[name] for name in cls.__slots__})


def tree_seeds(seed, n):
    """Deterministic per-tree seeds: ``(bootstrap_seed, split_seed)`` pairs."""
    ss = np.random.SeedSequence(seed)
    return [tuple(int(v) for v in child.generate_state(2, dtype=np.uint64)) for child in ss.spawn(n)]


class RandomForestSurvivalRegressor(RegressorMixin, BaseEstimator):
    """Bagged CART regression trees with random feature subsets at every split.

    ``mtry=None`` uses ``ceil(p / 3)`` candidate features per split.  Trees
    grow until nodes are pure or smaller than ``2 * min_leaf``.  Each tree
    has its own seed derived from ``seed``, so results are identical for any
    ``n_jobs``.
    """

    def __init__(self, n_trees=500, mtry=None, min_leaf=5, max_depth=None, bootstrap=True, seed=0, n_jobs=1):
        self.n_trees = n_trees
        self.mtry = mtry
        self.min_leaf = min_leaf
        self.max_depth = max_depth
        self.bootstrap = bootstrap
        self.seed = seed
        self.n_jobs = n_jobs

    def _resolved_mtry(self, p):
        if self.mtry is None:
            return max(1, math.ceil(p / 3))
        if isinstance(self.mtry, float) and 0 < self.mtry <= 1:
            return max(1, math.ceil(self.mtry * p))
        if not 1 <= int(self.mtry):
            raise ConfigurationError(f"mtry must be >= 1, got {self.mtry}")
        return min(int(self.mtry), p)

    def fit(self, X, y):
        X, y = _check_fit_input(X, y)
        n, p = X.shape
        if self.n_trees < 1 or self.min_leaf < 1:
            raise ConfigurationError("n_trees and min_leaf must be >= 1")
        if n < 2 * self.min_leaf:
            raise ConfigurationError(f"need n >= 2 * min_leaf samples (n={n}, min_leaf={self.min_leaf})")
        X = np.ascontiguousarray(X)
        order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
        mtry = self._resolved_mtry(p)
        depth = -1 if self.max_depth is None else int(self.max_depth)

        def _grow(seeds):
            boot_seed, split_seed = seeds
            if self.bootstrap:
                samples = np.random.default_rng(boot_seed).integers(0, n, size=n).astype(np.int64)
            else:
                samples = np.arange(n, dtype=np.int64)
            arrays = _kernels.grow_tree(X, y, order, samples, mtry, int(self.min_leaf), depth, np.uint64(split_seed))
            return RegressionTree(*arrays)

        self.trees_ = map_ordered(_grow, tree_seeds(self.seed, self.n_trees), n_jobs=self.n_jobs)
        self.n_features_in_ = p
        self.mtry_ = mtry
        self.y_range_ = (float(y.min()), float(y.max()))
        return self

    @property
    def feature_importances_(self):
        """Mean decrease in squared error per feature, normalised to sum to 1."""
        check_is_fitted(self, "trees_")
        imp = np.zeros(self.n_features_in_)
        for tree in self.trees_:
            split = tree.feature >= 0
            np.add.at(imp, tree.feature[split], tree.gain[split])
        total = imp.sum()
        return imp / total if total > 0 else imp

    def predict(self, X):
        check_is_fitted(self, "trees_")
        X = np.ascontiguousarray(_check_predict_input(self, X))
        acc = np.zeros(X.shape[0])
        for tree in self.trees_:
            acc += tree.predict(X)
        return acc / len(self.trees_)

    def to_dict(self):
        check_is_fitted(self, "trees_")
        # n_jobs is a runtime choice; keep it out of the artifact so it is thread-count independent
        params = {k: v for k, v in self.get_params().items() if k != "n_jobs"}
        return {
            "params": params,
            "n_features_in": self.n_features_in_,
            "mtry": self.mtry_,
            "y_range": list(self.y_range_),
            "trees": [t.to_dict() for t in self.trees_],
        }

    @classmethod
    def from_dict(cls, d):
        est = cls(**d["params"])
        est.n_features_in_ = int(d["n_features_in"])
        est.mtry_ = int(d["mtry"])
        est.y_range_ = tuple(d["y_range"])
        est.trees_ = [RegressionTree.from_dict(t) for t in d["trees"]]
        return est


def _kernel_matrix(A, B, kernel, gamma):
    if kernel == "linear":
        return A @ B.T
    sq = (A**2).sum(axis=1)[:, None] + (B**2).sum(axis=1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.clip(sq, 0.0, None))


class EpsilonSVR(RegressorMixin, BaseEstimator):
    """Epsilon-insensitive support vector regression solved by SMO.

    Inputs are standardised internally (per-column mean / population std
    stored in ``x_mean_`` / ``x_scale_``); targets stay in their own units so
    ``epsilon`` is expressed in days.  ``gamma="scale"`` means
    ``1 / (p * var(X_std))``.  Training stops once the maximal KKT violation
    drops below ``tol``.
    """

    def __init__(self, kernel="rbf", C=100.0, epsilon=30.0, gamma="scale", tol=1e-6, max_iter=10_000_000):
        self.kernel = kernel
        self.C = C
        self.epsilon = epsilon
        self.gamma = gamma
        self.tol = tol
        self.max_iter = max_iter

    def _standardise(self, X):
        return (X - self.x_mean_) / self.x_scale_

    def fit(self, X, y):
        X, y = _check_fit_input(X, y)
        if self.kernel not in ("rbf", "linear"):
            raise ConfigurationError(f"kernel must be 'rbf' or 'linear', got {self.kernel!r}")
        if not self.C > 0 or not self.epsilon >= 0:
            raise ConfigurationError("C must be > 0 and epsilon >= 0")
        n, p = X.shape
        if n < 2:
            raise ConfigurationError("epsilon-SVR needs at least 2 samples")
        self.x_mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        self.x_scale_ = np.where(scale > 0, scale, 1.0)
        Z = self._standardise(X)
        if self.gamma == "scale":
            var = Z.var()
            gamma = 1.0 / (p * var) if var > 0 else 1.0
        else:
            gamma = float(self.gamma)
        self.gamma_ = gamma
        K = np.ascontiguousarray(_kernel_matrix(Z, Z, self.kernel, gamma))
        alpha, alpha_star, rho, gap, n_iter = _kernels.smo_svr(
            K, np.ascontiguousarray(y), float(self.C), float(self.epsilon), float(self.tol), int(self.max_iter)
        )
        if gap >= self.tol:
            raise ConvergenceError(
                f"SMO did not reach KKT tolerance {self.tol:g} in {n_iter} iterations (violation {gap:.3g})",
                residual=float(gap),
            )
        beta = alpha - alpha_star
        if not np.any(beta != 0):
            # every point inside the tube: fall back to the target mean
            bias = float(y.mean())
        else:
            bias = float(-rho)
        support = np.flatnonzero(beta != 0)
        self.support_ = support
        self.support_vectors_ = Z[support]
        self.dual_coef_ = beta[support]
        self.intercept_ = bias
        self.n_iter_ = int(n_iter)
        self.kkt_gap_ = float(gap)
        self.dual_objective_ = float(0.5 * beta @ K @ beta + self.epsilon * np.abs(beta).sum() - y @ beta)
        self.n_features_in_ = p
        return self

    def decision_function(self, X):
        check_is_fitted(self, "dual_coef_")
        X = _check_predict_input(self, X)
        Z = self._standardise(X)
        if len(self.dual_coef_) == 0:
            return np.full(X.shape[0], self.intercept_)
        return _kernel_matrix(Z, self.support_vectors_, self.kernel, self.gamma_) @ self.dual_coef_ + self.intercept_

    predict = decision_function

    def kkt_violations(self, X, y):
        """Per-sample violation of the optimality conditions on ``(X, y)`` (the training data)."""
        check_is_fitted(self, "dual_coef_")
        X, y = _check_fit_input(X, y)
        beta = np.zeros(len(y))
        beta[self.support_] = self.dual_coef_
        resid = y - self.predict(X)
        C, eps = self.C, self.epsilon
        viol = np.empty(len(y))
        for k, (b, r) in enumerate(zip(beta, resid)):
            if b == 0:
                viol[k] = max(0.0, abs(r) - eps)
            elif abs(b) < C:
                viol[k] = abs(r - math.copysign(eps, b))
            else:
                viol[k] = max(0.0, eps - r * math.copysign(1.0, b))
        return viol

    def to_dict(self):
        check_is_fitted(self, "dual_coef_")
        return {
            "params": self.get_params(),
            "n_features_in": self.n_features_in_,
            "x_mean": self.x_mean_.tolist(),
            "x_scale": self.x_scale_.tolist(),
            "gamma": self.gamma_,
            "support": self.support_.tolist(),
            "support_vectors": self.support_vectors_.tolist(),
            "dual_coef": self.dual_coef_.tolist(),
            "intercept": self.intercept_,
            "dual_objective": self.dual_objective_,
            "n_iter": self.n_iter_,
            "kkt_gap": self.kkt_gap_,
        }

    @classmethod
    def from_dict(cls, d):
        est = cls(**d["params"])
        est.n_features_in_ = int(d["n_features_in"])
        est.x_mean_ = np.asarray(d["x_mean"], dtype=np.float64)
        est.x_scale_ = np.asarray(d["x_scale"], dtype=np.float64)
        est.gamma_ = float(d["gamma"])
        est.support_ = np.asarray(d["support"], dtype=np.int64)
        p = est.n_features_in_
        est.support_vectors_ = np.asarray(d["support_vectors"], dtype=np.float64).reshape(-1, p)
        est.dual_coef_ = np.asarray(d["dual_coef"], dtype=np.float64)
        est.intercept_ = float(d["intercept"])
        est.dual_objective_ = float(d["dual_objective"])
        est.n_iter_ = int(d["n_iter"])
        est.kkt_gap_ = float(d["kkt_gap"])
        return est


ESTIMATORS = {
    "linear": LinearSurvivalRegressor,
    "forest": RandomForestSurvivalRegressor,
    "svr": EpsilonSVR,
}


def estimator_to_dict(est) -> dict:
    for kind, cls in ESTIMATORS.items():
        if type(est) is cls:
            return {"kind": kind, **est.to_dict()}
    raise TypeError(f"cannot serialise {type(est).__name__}")


def estimator_from_dict(d):
    try:
        cls = ESTIMATORS[d["kind"]]
    except KeyError as exc:
        raise ConfigurationError(f"unknown estimator kind {d.get('kind')!r}") from exc
    return cls.from_dict(d)
