import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gliosurv.exceptions import ConfigurationError, ValidationError
from gliosurv.models import LinearSurvivalRegressor, RandomForestSurvivalRegressor
from gliosurv.selection import (
    CorrelationPruner,
    FeatureSelector,
    RFESelector,
    SelectionReport,
    prune_correlated,
    resolve_sizes,
    select_features,
)
from gliosurv.table import FeatureTable


def forest(n_trees=50):
    return RandomForestSurvivalRegressor(n_trees=n_trees)


def sparse_problem(seed, n=200, p=6):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    return X, 3 * X[:, 0] + rng.normal(scale=0.1, size=n)


# ---------------------------------------------------------------- pruning


class TestPruner:
    def test_identical_columns(self, rng):
        x = rng.normal(size=50)
        X = np.column_stack([x, rng.normal(size=50), x])
        pr = CorrelationPruner().fit(X, feature_names=["a", "b", "c"])
        assert pr.support_mask_.sum() == 2
        assert len(pr.removed_) == 1 and pr.removed_[0][2] == pytest.approx(1.0)

    def test_negated_column(self, rng):
        x = rng.normal(size=50)
        pr = CorrelationPruner().fit(np.column_stack([x, -x]))
        assert pr.support_mask_.sum() == 1
        assert pr.removed_[0][2] == pytest.approx(-1.0)

    def test_independent_columns_kept(self):
        kept = 0
        for seed in range(50):
            X = np.random.default_rng(seed).normal(size=(200, 2))
            kept += CorrelationPruner().fit(X).support_mask_.sum() == 2
        assert kept == 50

    def test_drops_the_more_connected_feature(self, rng):
        # b correlates with both a and c, so b goes rather than a
        base = rng.normal(size=300)
        a = base + 0.05 * rng.normal(size=300)
        b = base + 0.01 * rng.normal(size=300)
        c = base + 0.05 * rng.normal(size=300)
        pr = CorrelationPruner(0.99).fit(np.column_stack([a, b, c, rng.normal(size=300)]), feature_names="abcd")
        assert "b" not in pr.selected_names_

    def test_constant_column_flagged(self, rng):
        X = np.column_stack([rng.normal(size=30), np.full(30, 2.0), np.full(30, 2.0)])
        pr = CorrelationPruner().fit(X, feature_names=["a", "k1", "k2"])
        assert pr.selected_names_ == ["a", "k1", "k2"]
        assert pr.constant_ == ["k1", "k2"]

    def test_needs_two_subjects(self):
        with pytest.raises(ValidationError):
            CorrelationPruner().fit(np.ones((1, 3)))

    @settings(max_examples=30)
    @given(st.integers(0, 2**31), st.floats(0.5, 0.99))
    def test_no_surviving_pair_above_threshold(self, seed, thr):
        rng = np.random.default_rng(seed)
        base = rng.normal(size=(40, 3))
        X = np.column_stack([base, base @ rng.normal(size=(3, 6)) + 0.1 * rng.normal(size=(40, 6))])
        pr = CorrelationPruner(thr).fit(X)
        kept = X[:, pr.support_mask_]
        assert kept.shape[1] <= X.shape[1]
        R = np.abs(np.corrcoef(kept, rowvar=False))
        np.fill_diagonal(R, 0)
        assert R.max() <= thr + 1e-12

    def test_deterministic(self, rng):
        X = rng.normal(size=(30, 10))
        X[:, 5] = X[:, 2] * 2
        a = CorrelationPruner().fit(X)
        b = CorrelationPruner().fit(X)
        assert a.removed_ == b.removed_


# ---------------------------------------------------------------- RFE


def test_resolve_sizes():
    assert resolve_sizes(None, 7) == [2, 4, 6, 7]
    assert resolve_sizes(None, 100) == [2, 4, 6, 8, 10, 15, 20, 30, 50, 100]
    assert resolve_sizes([3, 1], 5) == [1, 3]
    with pytest.raises(ConfigurationError):
        resolve_sizes([2, 9], 5)
    with pytest.raises(ConfigurationError):
        resolve_sizes([], 5)


def test_size_above_feature_count_raises(rng):
    X, y = sparse_problem(0, n=50)
    with pytest.raises(ConfigurationError):
        RFESelector(forest(), sizes=[2, 10]).fit(X, y)


def test_signal_feature_ranked_first():
    hits = 0
    for seed in range(100):
        X, y = sparse_problem(seed)
        sel = RFESelector(forest(), seed=seed).fit(X, y)
        hits += sel.ranking_[0][0] == "x0"
    assert hits >= 95


def test_pure_noise_picks_smallest_size():
    smallest = 0
    for seed in range(15):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(200, 6))
        sel = RFESelector(forest(), seed=seed).fit(X, rng.normal(size=200))
        smallest += sel.optimal_size_ == 2
        # the tie rule: every size within one SE of the best counts as tied
        best = min(sel.cv_curve_, key=sel.cv_curve_.get)
        tied = [s for s, v in sel.cv_curve_.items() if v <= sel.cv_curve_[best] + sel.cv_se_[best]]
        assert sel.optimal_size_ == min(tied)
    assert smallest > 15 / 2


def test_zero_tolerance_is_argmin():
    X, y = sparse_problem(3, n=120)
    sel = RFESelector(forest(), seed=1, tie_tolerance=0.0).fit(X, y)
    assert sel.optimal_size_ == min(sel.cv_curve_, key=lambda s: (sel.cv_curve_[s], s))


def test_report_invariants_and_determinism():
    X, y = sparse_problem(5, n=120, p=8)
    a = RFESelector(forest(), seed=9).fit(X, y)
    b = RFESelector(forest(), seed=9, n_jobs=3).fit(X, y)
    ra, rb = a.report(), b.report()
    assert ra.to_json() == rb.to_json()
    imps = [v for _, v in ra.ranking]
    assert imps[0] == 100.0
    assert all(0 <= v <= 100 for v in imps)
    assert imps == sorted(imps, reverse=True)
    assert set(ra.selected) <= {f"x{i}" for i in range(8)}
    assert len(ra.selected) == ra.optimal_size == a.transform(X).shape[1]
    assert SelectionReport.from_json(ra.to_json()) == ra


def test_one_at_a_time_and_permutation_importance():
    X, y = sparse_problem(2, n=120, p=5)
    sel = RFESelector(forest(30), seed=0, one_at_a_time=True, importance="permutation").fit(X, y)
    assert sorted(sel.cv_curve_) == [1, 2, 3, 4, 5]
    assert sel.ranking_[0] == ("x0", 100.0)


def test_permutation_importance_with_any_estimator():
    X, y = sparse_problem(2, n=80, p=4)
    sel = RFESelector(LinearSurvivalRegressor(), seed=0, importance="permutation").fit(X, y)
    assert sel.ranking_[0] == ("x0", 100.0)
    with pytest.raises(ConfigurationError):
        RFESelector(LinearSurvivalRegressor()).fit(X, y)


# ---------------------------------------------------------------- table-level


def test_select_features_on_table():
    X, y = sparse_problem(4, n=100, p=6)
    X = np.column_stack([X, X[:, 1]])  # a duplicate that pruning must drop
    names = [f"f{i}" for i in range(7)]
    table = FeatureTable([f"S{i:03d}" for i in range(100)], names, X, targets=y)
    report = select_features(table, estimator=forest(), sizes=[2, 4, 6, 7], seed=3)
    assert [r[1] for r in report.removed_correlated] == ["f6"] or [r[1] for r in report.removed_correlated] == ["f1"]
    assert report.ranking[0] == ("f0", 100.0)
    assert "f6" not in report.selected or "f1" not in report.selected
    pruned, _ = prune_correlated(table)
    assert len(pruned.feature_names) == 6


def test_feature_selector_transform():
    X, y = sparse_problem(8, n=100, p=6)
    fs = FeatureSelector(estimator=forest(), seed=0).fit(X, y)
    assert fs.transform(X).shape == (100, len(fs.selected_))
    np.testing.assert_array_equal(fs.transform(X)[:, 0], X[:, fs.selected_indices_[0]])
