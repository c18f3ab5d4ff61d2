import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gliosurv.exceptions import ConfigurationError, ShapeError, SingularDesignError
from gliosurv.models import (
    EpsilonSVR,
    LinearSurvivalRegressor,
    RandomForestSurvivalRegressor,
    estimator_from_dict,
    estimator_to_dict,
)
from oracles import svr_dual_oracle


def rbf_gram(X):
    Z = (X - X.mean(axis=0)) / X.std(axis=0)
    gamma = 1.0 / (X.shape[1] * Z.var())
    d2 = ((Z[:, None, :] - Z[None, :, :]) ** 2).sum(axis=-1)
    return np.exp(-gamma * d2)


def svr_problem(seed, n=20):
    rng = np.random.default_rng(seed)
    X = np.column_stack([rng.uniform(20, 80, n), rng.uniform(0.2, 1.0, n)])
    y = rng.uniform(50, 1200, n)
    return X, y


# ---------------------------------------------------------------- linear


class TestLinear:
    def test_two_points(self):
        m = LinearSurvivalRegressor().fit([[0.0], [1.0]], [0.0, 1.0])
        assert m.coef_[0] == pytest.approx(1.0, abs=1e-12)
        assert m.intercept_ == pytest.approx(0.0, abs=1e-12)
        assert m.predict([[5.0]])[0] == pytest.approx(5.0)

    def test_constant_target(self, rng):
        X = rng.normal(size=(30, 2))
        m = LinearSurvivalRegressor().fit(X, np.full(30, 412.0))
        np.testing.assert_allclose(m.coef_, 0, atol=1e-10)
        assert m.intercept_ == pytest.approx(412.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_pseudo_inverse(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(50, 2)) * [10, 0.3] + [60, 0.5]
        y = X @ [-4.0, 300.0] + 700 + rng.normal(scale=50, size=50)
        m = LinearSurvivalRegressor().fit(X, y)
        beta = np.linalg.pinv(np.column_stack([np.ones(50), X])) @ y
        np.testing.assert_allclose([m.intercept_, *m.coef_], beta, rtol=1e-8, atol=1e-8)
        resid = y - m.predict(X)
        np.testing.assert_allclose(np.column_stack([np.ones(50), X]).T @ resid, 0, atol=1e-8 * np.abs(y).sum())

    def test_rank_deficient(self):
        X = np.column_stack([np.arange(10.0), 2 * np.arange(10.0)])
        with pytest.raises(SingularDesignError):
            LinearSurvivalRegressor().fit(X, np.arange(10.0))
        with pytest.raises(SingularDesignError):
            LinearSurvivalRegressor().fit([[1.0, 2.0]], [3.0])

    def test_shape_error(self):
        m = LinearSurvivalRegressor().fit([[0.0], [1.0], [2.0]], [0.0, 1.0, 2.5])
        with pytest.raises(ShapeError):
            m.predict([[1.0, 2.0]])


# ---------------------------------------------------------------- forest


def small_forest(**kw):
    kw.setdefault("n_trees", 30)
    return RandomForestSurvivalRegressor(**kw)


class TestForest:
    def test_constant_target(self, rng):
        X = rng.normal(size=(40, 4))
        m = small_forest().fit(X, np.full(40, 250.0))
        np.testing.assert_array_equal(m.predict(rng.normal(size=(10, 4))), 250.0)

    @settings(max_examples=15)
    @given(st.integers(0, 2**31), st.integers(10, 60), st.integers(1, 6), st.integers(1, 5))
    def test_bounds_and_leaf_sizes(self, seed, n, p, min_leaf):
        rng = np.random.default_rng(seed)
        X = np.round(rng.normal(size=(n, p)), 1)
        y = rng.uniform(0, 1000, n)
        min_leaf = min(min_leaf, n // 2)
        m = small_forest(n_trees=5, min_leaf=min_leaf, seed=seed).fit(X, y)
        pred = m.predict(rng.normal(size=(25, p)) * 3)
        assert np.all(pred >= y.min() - 1e-9) and np.all(pred <= y.max() + 1e-9)
        for tree in m.trees_:
            leaves = tree.feature < 0
            assert np.all(tree.n_node[leaves] >= min_leaf)

    def test_step_function(self):
        rng = np.random.default_rng(7)
        X = rng.uniform(size=(500, 1))
        y = 100.0 * (X[:, 0] > 0.5)
        m = RandomForestSurvivalRegressor(seed=1).fit(X, y)
        grid = np.linspace(0, 1, 1001)[:, None]
        assert np.mean((m.predict(grid) - 100.0 * (grid[:, 0] > 0.5)) ** 2) < 25

    def test_memorises_without_bootstrap(self, rng):
        X = rng.normal(size=(30, 3))
        y = rng.uniform(0, 1000, 30)
        m = RandomForestSurvivalRegressor(n_trees=1, min_leaf=1, bootstrap=False, mtry=3).fit(X, y)
        np.testing.assert_allclose(m.predict(X), y)

    def test_serial_parallel_identical(self, rng):
        X = rng.normal(size=(60, 8))
        y = X[:, 0] * 100 + rng.normal(size=60)
        a = small_forest(seed=3, n_jobs=1).fit(X, y)
        b = small_forest(seed=3, n_jobs=4).fit(X, y)
        np.testing.assert_array_equal(a.predict(X), b.predict(X))
        np.testing.assert_array_equal(a.feature_importances_, b.feature_importances_)
        assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())

    def test_seed_changes_model(self, rng):
        X = rng.normal(size=(60, 8))
        y = rng.normal(size=60)
        a = small_forest(seed=1).fit(X, y).predict(X)
        b = small_forest(seed=2).fit(X, y).predict(X)
        assert not np.array_equal(a, b)

    def test_importances(self, rng):
        X = rng.normal(size=(200, 5))
        y = 100 * X[:, 2] + rng.normal(size=200)
        imp = small_forest().fit(X, y).feature_importances_
        assert imp.sum() == pytest.approx(1.0)
        assert np.argmax(imp) == 2

    def test_errors(self, rng):
        with pytest.raises(ConfigurationError):
            small_forest(min_leaf=5).fit(rng.normal(size=(9, 2)), rng.normal(size=9))
        m = small_forest().fit(rng.normal(size=(20, 2)), rng.normal(size=20))
        with pytest.raises(ShapeError):
            m.predict(rng.normal(size=(3, 3)))


# ---------------------------------------------------------------- svr


class TestSVR:
    def test_linear_kernel_line(self):
        x = np.linspace(-3, 3, 25)[:, None]
        y = 2 * x[:, 0]
        m = EpsilonSVR(kernel="linear", C=1000, epsilon=0.01).fit(x, y)
        assert np.all(np.abs(m.predict(x) - y) <= 0.01 + 0.01)

    def test_constant_target(self, rng):
        X = rng.normal(size=(15, 2))
        m = EpsilonSVR().fit(X, np.full(15, 333.0))
        np.testing.assert_allclose(m.predict(rng.normal(size=(5, 2))), 333.0, atol=1e-6)
        assert len(m.dual_coef_) == 0

    @pytest.mark.parametrize("seed,C", [(0, 100.0), (1, 1000.0), (2, 1e4), (3, 10.0)])
    def test_dual_matches_qp_oracle(self, seed, C):
        X, y = svr_problem(seed)
        m = EpsilonSVR(C=C).fit(X, y)
        ref, _ = svr_dual_oracle(rbf_gram(X), y, C, 30.0)
        assert abs(m.dual_objective_ - ref) <= 1e-4 * abs(ref)

    @settings(max_examples=15)
    @given(st.integers(0, 2**31), st.sampled_from([10.0, 100.0, 1000.0]), st.sampled_from(["rbf", "linear"]))
    def test_kkt_and_box(self, seed, C, kernel):
        X, y = svr_problem(seed)
        m = EpsilonSVR(C=C, kernel=kernel).fit(X, y)
        assert m.kkt_violations(X, y).max() < 1e-6 * max(1.0, np.abs(y).max())
        assert np.all(np.abs(m.dual_coef_) <= C + 1e-12)
        assert m.dual_coef_.sum() == pytest.approx(0.0, abs=1e-8 * C)

    def test_scale_invariant_inputs(self):
        X, y = svr_problem(4)
        a = EpsilonSVR().fit(X, y).predict(X)
        b = EpsilonSVR().fit(X * [3.0, 0.01] + 5, y).predict(X * [3.0, 0.01] + 5)
        np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-6)

    def test_errors(self):
        X, y = svr_problem(0)
        with pytest.raises(ConfigurationError):
            EpsilonSVR(kernel="poly").fit(X, y)
        with pytest.raises(ConfigurationError):
            EpsilonSVR(C=0).fit(X, y)
        with pytest.raises(ShapeError):
            EpsilonSVR().fit(X, y).predict(X[:, :1])


# ---------------------------------------------------------------- serialisation


@pytest.mark.parametrize(
    "est",
    [LinearSurvivalRegressor(), small_forest(n_trees=7, seed=5), EpsilonSVR(), EpsilonSVR(kernel="linear", gamma=0.5)],
    ids=["linear", "forest", "svr", "svr-linear"],
)
def test_json_round_trip(est, rng):
    X, y = svr_problem(11, n=40)
    est.fit(X, y)
    d = json.loads(json.dumps(estimator_to_dict(est)))
    back = estimator_from_dict(d)
    np.testing.assert_array_equal(back.predict(X), est.predict(X))
    assert back.get_params() == {k: v for k, v in est.get_params().items()}


def test_unknown_kind():
    with pytest.raises(ConfigurationError):
        estimator_from_dict({"kind": "cox"})
