import numpy as np
import pytest

from termnet import baselines as B
from termnet.losses import Task


def _data(rng, n=200, p=6, sparse=3, noise=0.1):
    X = rng.normal(size=(n, p))
    beta = np.zeros(p)
    beta[:sparse] = rng.normal(size=sparse) * 2.0
    y = X @ beta + 0.5 + noise * rng.normal(size=n)
    return X, y, beta


class TestNaive:
    def test_return_constant_long(self):
        assert B.naive_forecast(Task.RETURN) == 1.0
        out = B.naive_forecast(Task.RETURN, np.zeros(5))
        assert np.array_equal(out, np.ones(5))

    def test_volume_zero(self):
        assert B.naive_forecast(Task.VOLUME) == 0.0
        assert np.array_equal(B.naive_forecast(Task.VOLUME, np.ones(4)), np.zeros(4))

    def test_volatility_carry_forward(self):
        h = np.array([3.0, 5.0, 7.0])
        out = B.naive_forecast(Task.VOLATILITY, h)
        assert np.isnan(out[0]) and list(out[1:]) == [3.0, 5.0]
        with pytest.raises(ValueError):
            B.naive_forecast(Task.VOLATILITY)

    def test_unknown_task(self):
        with pytest.raises(ValueError):
            B.naive_forecast("NOPE")


class TestOls:
    def test_normal_equations_oracle(self):
        rng = np.random.default_rng(0)
        X, y, _ = _data(rng)
        m = B.ols_fit(X, y)
        Xa = np.column_stack([np.ones(len(y)), X])
        oracle = np.linalg.lstsq(Xa, y, rcond=None)[0]
        assert abs(m.intercept - oracle[0]) <= 1e-8
        assert np.max(np.abs(m.coefficients - oracle[1:])) <= 1e-8
        assert not m.meta["ridge_fallback"]

    def test_exact_linear_zero_residuals(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(50, 3))
        y = X @ np.array([2.0, -1.0, 0.5]) + 3.0
        m = B.ols_fit(X, y)
        assert np.max(np.abs(m.predict(X) - y)) <= 1e-8

    def test_single_feature_matches_cov_over_var(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=100)
        y = 1.5 * x + rng.normal(size=100)
        m = B.ols_fit(x[:, None], y)
        slope = np.cov(x, y, bias=True)[0, 1] / np.var(x)
        assert m.coefficients[0] == pytest.approx(slope, abs=1e-10)
        assert m.intercept == pytest.approx(y.mean() - slope * x.mean(), abs=1e-10)

    def test_duplicate_column_triggers_ridge_fallback(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=60)
        X = np.column_stack([x, x])
        y = x + rng.normal(size=60) * 0.1
        m = B.ols_fit(X, y)
        assert m.meta["ridge_fallback"]
        assert np.all(np.isfinite(m.coefficients))

    def test_needs_enough_rows(self):
        with pytest.raises(ValueError):
            B.ols_fit(np.ones((3, 4)), np.ones(3))


class TestLasso:
    def test_lambda_at_least_max_gives_zero(self):
        rng = np.random.default_rng(4)
        X, y, _ = _data(rng)
        grid = B.lasso_lambda_grid(X, y)
        m = B.lasso_fit(X, y, lambdas=[grid[0] * 1.001, grid[0] * 2.0])
        assert np.all(m.coefficients == 0.0)
        assert m.intercept == pytest.approx(y.mean(), abs=1e-12)

    def test_zero_lambda_matches_ols(self):
        rng = np.random.default_rng(5)
        X, y, _ = _data(rng, n=120, p=4)
        m = B.lasso_fit(X, y, lambdas=[0.0])
        o = B.ols_fit(X, y)
        assert np.max(np.abs(m.coefficients - o.coefficients)) <= 1e-6
        assert abs(m.intercept - o.intercept) <= 1e-6

    def test_orthonormal_soft_threshold_closed_form(self):
        # with X'X/n = I the solution is soft-thresholded OLS coefficients
        rng = np.random.default_rng(6)
        n, p = 400, 5
        A = rng.normal(size=(n, p))
        q, _ = np.linalg.qr(A - A.mean(axis=0))
        X = q * np.sqrt(n)                      # columns orthonormal under 1/n inner product
        beta = np.array([1.2, -0.8, 0.05, 0.0, 0.4])
        y = X @ beta
        lam = 0.1
        m = B.lasso_fit(X, y, lambdas=[lam])
        bhat = X.T @ (y - y.mean()) / n
        expect = np.sign(bhat) * np.maximum(np.abs(bhat) - lam, 0.0)
        assert np.max(np.abs(m.coefficients - expect)) <= 1e-8

    def test_kkt_conditions_hold(self):
        rng = np.random.default_rng(7)
        X, y, _ = _data(rng, n=300, p=8)
        m = B.lasso_fit(X, y)
        assert B.lasso_kkt_violation(X, y, m) <= 1e-6

    def test_cv_error_per_grid_point(self):
        rng = np.random.default_rng(8)
        X, y, _ = _data(rng, n=150, p=4)
        grid = B.lasso_lambda_grid(X, y, n_points=10)
        m = B.lasso_fit(X, y, lambdas=grid)
        assert len(m.meta["cv_error"]) == 10
        assert len(m.meta["lambda_grid"]) == 10
        assert m.meta["lambda"] in m.meta["lambda_grid"]

    def test_fold_assignment_switch(self):
        rng = np.random.default_rng(9)
        X, y, _ = _data(rng, n=150, p=4, noise=1.0)
        a = B.lasso_fit(X, y, contiguous_folds=True)
        b = B.lasso_fit(X, y, contiguous_folds=False)
        # both are valid solutions for their own selected penalty
        assert B.lasso_kkt_violation(X, y, a) <= 1e-6
        assert B.lasso_kkt_violation(X, y, b) <= 1e-6

    def test_sparser_than_ols_on_sparse_truth(self):
        rng = np.random.default_rng(10)
        X, y, beta = _data(rng, n=500, p=10, sparse=3, noise=0.05)
        m = B.lasso_fit(X, y)
        assert np.count_nonzero(m.coefficients) < 10


class TestPcr:
    def test_dominant_component_gets_one(self):
        rng = np.random.default_rng(11)
        n = 300
        f = rng.normal(size=n)
        X = np.column_stack([10.0 * f, 0.01 * rng.normal(size=n), 0.01 * rng.normal(size=n)])
        y = f + 0.01 * rng.normal(size=n)
        m = B.pcr_fit(X, y)
        assert m.meta["n_components"] == 1
        assert m.meta["explained_variance"] >= 0.90

    def test_isotropic_needs_ceil_fraction(self):
        rng = np.random.default_rng(12)
        n, p = 5000, 10
        X = rng.normal(size=(n, p))
        y = rng.normal(size=n)
        m = B.pcr_fit(X, y, variance_target=0.90)
        # near-equal eigenvalues: components accumulate ~1/p each
        assert m.meta["n_components"] == 9

    def test_full_components_match_ols(self):
        rng = np.random.default_rng(13)
        X, y, _ = _data(rng, n=100, p=4)
        m = B.pcr_fit(X, y, variance_target=1.0)
        o = B.ols_fit(X, y)
        assert m.meta["n_components"] == 4
        assert np.max(np.abs(m.coefficients - o.coefficients)) <= 1e-8
        assert abs(m.intercept - o.intercept) <= 1e-8

    def test_boundary_exact_target(self):
        # two orthogonal columns with variance split exactly 90/10
        n = 1000
        a = np.tile([1.0, -1.0], n // 2) * 3.0
        b = np.tile([1.0, 1.0, -1.0, -1.0], n // 4)
        X = np.column_stack([a, b])
        y = a + b
        m = B.pcr_fit(X, y, variance_target=0.90)
        assert m.meta["n_components"] == 1

    def test_rank_deficient_clamps(self):
        rng = np.random.default_rng(14)
        x = rng.normal(size=80)
        X = np.column_stack([x, 2.0 * x, -x])
        y = x
        m = B.pcr_fit(X, y, variance_target=0.999)
        assert m.meta["n_components"] == 1
        assert np.max(np.abs(m.predict(X) - y)) <= 1e-8

    def test_constant_matrix_intercept_only(self):
        X = np.ones((30, 3))
        y = np.full(30, 2.5)
        m = B.pcr_fit(X, y)
        assert m.meta["n_components"] == 0
        assert m.intercept == 2.5


class TestImportance:
    def test_hand_ranks(self):
        m1 = B.LinearModel(np.array([0.0, 3.0, -1.0]), 0.0)
        m2 = B.LinearModel(np.array([0.0, 2.0, -5.0]), 0.0)
        table = B.feature_importance([m1, m2], ["a", "b", "c"])
        d = {name: (rank, nz) for name, rank, nz in table}
        assert d["a"] == (1.0, 0)
        assert d["b"] == (2.5, 2)      # ranks 3 and 2
        assert d["c"] == (2.5, 2)      # ranks 2 and 3
        assert table[-1][0] == "a"

    def test_zeros_share_minimum_rank(self):
        m = B.LinearModel(np.array([0.0, 0.0, 1.0, 0.0]), 0.0)
        table = B.feature_importance([m], list("wxyz"))
        d = {name: rank for name, rank, _ in table}
        assert d["w"] == d["x"] == d["z"] == 1.0
        assert d["y"] == 4.0

    def test_single_model_sorted_descending(self):
        m = B.LinearModel(np.array([0.5, -2.0, 1.0]), 0.0)
        table = B.feature_importance([m], ["a", "b", "c"])
        assert [t[0] for t in table] == ["b", "c", "a"]

    def test_empty_models_rejected(self):
        with pytest.raises(ValueError):
            B.feature_importance([], ["a"])

    def test_csv_export(self, tmp_path):
        m = B.LinearModel(np.array([0.5, -2.0]), 0.0)
        table = B.feature_importance([m], ["a", "b"])
        path = tmp_path / "imp.csv"
        B.export_importance_csv(table, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "feature,median_rank,nonzero_count"
        assert lines[1] == "b,2,1"


class TestSerialization:
    def test_model_json(self, tmp_path):
        import json
        m = B.LinearModel(np.array([1.0, -2.0]), 0.5, ["f1", "f2"], {"model": "ols"})
        path = tmp_path / "m.json"
        m.to_json(path)
        back = json.loads(path.read_text())
        assert back["intercept"] == 0.5
        assert back["coefficients"] == {"f1": 1.0, "f2": -2.0}
