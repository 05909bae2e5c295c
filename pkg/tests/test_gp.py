"""Trend bases, covariance assembly, GLS, prediction, Kbar, projections."""

import json

import numpy as np
import pytest

from gpcal import Dataset, KernelFamily, KernelSpec, TrendSpec
from gpcal.exceptions import (
    HypothesisH1Error,
    HypothesisH2Error,
    IllConditionedError,
)
from gpcal.gp import (
    build_covariance,
    build_regression_matrix,
    check_hypotheses,
    compute_kbar,
    fit_beta,
    fit_gp,
    model_from_dict,
    model_to_dict,
    predict,
    prediction_interval,
    projection_basis,
)
from gpcal.stats import normal_quantile

from conftest import dense_kbar, dense_predict, random_dataset, random_kernel

ORD = TrendSpec.from_string("ordinary")
UNI = TrendSpec.from_string("universal")
SIM = TrendSpec.from_string("simple")


class TestRegressionMatrix:
    def test_ordinary_is_all_ones(self, rng):
        X = rng.uniform(0, 1, (7, 3))
        F = build_regression_matrix(X, ORD)
        np.testing.assert_array_equal(F, np.ones((7, 1)))

    def test_universal_is_constant_plus_coordinates(self):
        # Basis evaluation at a point: constant then the coordinates.  The
        # training-matrix builder additionally demands n >= p, so a single
        # row goes through the trend basis directly.
        row = UNI.basis(np.array([[2.0, 3.0]]))
        np.testing.assert_array_equal(row, np.array([[1.0, 2.0, 3.0]]))
        X = np.column_stack([np.linspace(0, 1, 6), np.linspace(2, 3, 6) ** 2])
        F = build_regression_matrix(X, UNI)
        np.testing.assert_array_equal(F[:, 0], np.ones(6))
        np.testing.assert_array_equal(F[:, 1:], X)

    def test_collinear_design_raises_h1(self, rng):
        x = rng.uniform(0, 1, 10)
        X = np.column_stack([x, x])    # two identical columns
        with pytest.raises(HypothesisH1Error):
            build_regression_matrix(X, UNI)

    def test_too_few_rows_raises_h1(self):
        with pytest.raises(HypothesisH1Error):
            build_regression_matrix(np.array([[1.0, 2.0]]), UNI)


class TestBuildCovariance:
    def test_single_point_with_nugget(self):
        spec = KernelSpec(KernelFamily.MATERN32, 1.0, np.array([1.0]),
                          nugget=0.5)
        K, L, jitter = build_covariance(np.array([[0.3]]), spec)
        np.testing.assert_allclose(K, [[1.5]])
        assert jitter == 0.0

    def test_matches_entrywise_kernel(self, rng):
        X = rng.uniform(0, 1, (3, 2))
        spec = random_kernel(rng, 2, nugget=0.0)
        from conftest import dense_gram
        K, _, _ = build_covariance(X, spec)
        np.testing.assert_allclose(K, dense_gram(X, spec), rtol=1e-12)

    def test_duplicate_rows_no_nugget_rejected(self):
        X = np.array([[0.1, 0.2], [0.1, 0.2], [0.5, 0.6]])
        spec = KernelSpec(KernelFamily.MATERN52, 1.0, np.array([1.0, 1.0]))
        with pytest.raises(IllConditionedError):
            build_covariance(X, spec)

    def test_jitter_rescues_near_singular(self, rng):
        # Two nearly identical points with a smooth kernel: plain Cholesky
        # fails, the escalating ridge recovers it.
        X = np.array([[0.0], [1e-9], [0.5]])
        spec = KernelSpec(KernelFamily.SQUARED_EXPONENTIAL, 1.0,
                          np.array([1.0]))
        K, L, jitter = build_covariance(X, spec)
        assert jitter > 0.0
        np.testing.assert_allclose(L @ L.T, K, rtol=1e-10, atol=1e-12)


class TestFitBeta:
    def test_identity_covariance_ordinary_is_mean(self, rng):
        n = 9
        y = rng.standard_normal(n)
        F = np.ones((n, 1))
        L = np.eye(n)
        beta = fit_beta(F, L, y)
        assert beta[0] == pytest.approx(y.mean(), rel=1e-12)

    def test_identity_covariance_universal_is_ols(self, rng):
        n, d = 12, 2
        X = rng.uniform(0, 1, (n, d))
        y = rng.standard_normal(n)
        F = UNI.basis(X)
        beta = fit_beta(F, np.eye(n), y)
        expected, *_ = np.linalg.lstsq(F, y, rcond=None)
        np.testing.assert_allclose(beta, expected, rtol=1e-10)

    def test_matches_dense_formula(self, rng):
        n, p = 8, 2
        A = rng.standard_normal((n, n))
        K = A @ A.T + n * np.eye(n)
        L = np.linalg.cholesky(K)
        F = rng.standard_normal((n, p))
        y = rng.standard_normal(n)
        Kinv = np.linalg.inv(K)
        expected = np.linalg.inv(F.T @ Kinv @ F) @ F.T @ Kinv @ y
        np.testing.assert_allclose(fit_beta(F, L, y), expected, rtol=1e-10)

    def test_normal_equation_residual(self, rng):
        ds = random_dataset(rng, n=14, d=2)
        spec = random_kernel(rng, 2)
        model = fit_gp(ds, spec, UNI)
        Kinv_F = np.linalg.solve(model.K, model.F)
        lhs = model.F.T @ Kinv_F @ model.beta_hat
        rhs = model.F.T @ np.linalg.solve(model.K, ds.y)
        assert np.linalg.norm(lhs - rhs) <= 1e-8 * np.linalg.norm(rhs)


class TestPredict:
    def test_interpolates_training_points_without_nugget(self, rng):
        ds = random_dataset(rng, n=10, d=2)
        spec = random_kernel(rng, 2, nugget=0.0)
        model = fit_gp(ds, spec, ORD)
        for i in range(ds.n):
            mean, var = predict(model, ds.X[i])
            assert abs(mean - ds.y[i]) <= 1e-6 * max(ds.y.std(), 1.0)
            assert var <= 1e-6 * spec.sigma2

    def test_far_field_reverts_to_trend(self, rng):
        ds = random_dataset(rng, n=10, d=2)
        spec = random_kernel(rng, 2, family=KernelFamily.MATERN32,
                             nugget=0.2)
        model = fit_gp(ds, spec, ORD)
        x_far = ds.X[0] + 1e6 * spec.theta.max()
        mean, var = predict(model, x_far)
        trend_mean = model.beta_hat[0]
        assert mean == pytest.approx(trend_mean, rel=1e-8, abs=1e-10)
        # limit variance: sigma2 + nugget + trend term 1' (F'K^{-1}F)^{-1} 1
        G = model.F.T @ np.linalg.solve(model.K, model.F)
        trend_var = float(np.linalg.inv(G)[0, 0])
        assert var == pytest.approx(spec.sigma2 + spec.nugget + trend_var,
                                    rel=1e-6)

    def test_matches_dense_transcription(self, rng):
        for trend in (SIM, ORD, UNI):
            ds = random_dataset(rng, n=5, d=1)
            spec = random_kernel(rng, 1)
            model = fit_gp(ds, spec, trend)
            x_new = np.array([0.37])
            mean, var = predict(model, x_new)
            m_o, v_o = dense_predict(ds.X, ds.y, model.F, spec, trend, x_new)
            assert mean == pytest.approx(m_o, rel=1e-8, abs=1e-10)
            assert var == pytest.approx(v_o, rel=1e-8, abs=1e-12)

    def test_variance_dominates_simple_kriging(self, rng):
        # The trend-uncertainty quadratic form is non-negative.
        ds = random_dataset(rng, n=12, d=2)
        spec = random_kernel(rng, 2)
        m_ord = fit_gp(ds, spec, ORD)
        m_sim = fit_gp(ds, spec, SIM)
        for _ in range(20):
            x = rng.uniform(-0.5, 1.5, 2)
            _, v_ord = predict(m_ord, x)
            _, v_sim = predict(m_sim, x)
            assert v_ord >= v_sim - 1e-12

    def test_batch_equals_pointwise(self, rng):
        ds = random_dataset(rng, n=9, d=2)
        model = fit_gp(ds, random_kernel(rng, 2), ORD)
        Z = rng.uniform(0, 1, (5, 2))
        means, variances = predict(model, Z)
        for i in range(5):
            m, v = predict(model, Z[i])
            assert m == pytest.approx(means[i], rel=1e-13)
            assert v == pytest.approx(variances[i], rel=1e-13)


class TestPredictionInterval:
    def test_standard_normal_quantile(self, rng):
        ds = random_dataset(rng, n=8, d=1)
        model = fit_gp(ds, random_kernel(rng, 1), ORD)
        x = np.array([0.4])
        mean, var = predict(model, x)
        lo, up = prediction_interval(model, x, 0.05)
        q = 1.959963984540054  # Phi^{-1}(0.975)
        assert up - mean == pytest.approx(q * np.sqrt(var), rel=1e-9)
        assert mean - lo == pytest.approx(q * np.sqrt(var), rel=1e-9)

    def test_width_symmetric(self, rng):
        ds = random_dataset(rng, n=8, d=1)
        model = fit_gp(ds, random_kernel(rng, 1), ORD)
        for alpha in (0.01, 0.1, 0.5, 0.9):
            lo, up = prediction_interval(model, np.array([0.2]), alpha)
            mean, var = predict(model, np.array([0.2]))
            expected = 2.0 * normal_quantile(1 - alpha / 2) * np.sqrt(var)
            assert up - lo == pytest.approx(expected, rel=1e-9)
            assert up >= lo


class TestKbar:
    def test_simple_kriging_kbar_is_kinv(self, rng):
        ds = random_dataset(rng, n=8, d=2)
        spec = random_kernel(rng, 2)
        model = fit_gp(ds, spec, SIM)
        kbar = compute_kbar(model)
        np.testing.assert_allclose(kbar, np.linalg.inv(model.K),
                                   rtol=1e-7, atol=1e-9)

    def test_kernel_contains_trend_space(self, rng):
        # Kbar F = 0.
        ds = random_dataset(rng, n=6, d=2)
        model = fit_gp(ds, random_kernel(rng, 2), UNI)
        kbar = compute_kbar(model)
        assert np.linalg.norm(kbar @ model.F) <= \
            1e-8 * np.linalg.norm(kbar) * np.linalg.norm(model.F)

    def test_residual_basis_identity(self, rng):
        # Kbar = W (W' K W)^{-1} W'.
        ds = random_dataset(rng, n=10, d=2)
        model = fit_gp(ds, random_kernel(rng, 2), ORD)
        kbar = compute_kbar(model)
        W = projection_basis(model.F).W
        alt = W @ np.linalg.inv(W.T @ model.K @ W) @ W.T
        np.testing.assert_allclose(kbar, alt,
                                   atol=1e-8 * np.linalg.norm(kbar))

    def test_matches_dense_oracle(self, rng):
        for trend in (ORD, UNI):
            ds = random_dataset(rng, n=12, d=2)
            spec = random_kernel(rng, 2)
            model = fit_gp(ds, spec, trend)
            kbar = compute_kbar(model)
            oracle = dense_kbar(ds.X, ds.y, model.F, spec)
            np.testing.assert_allclose(
                kbar, oracle, atol=1e-8 * np.abs(oracle).max())

    def test_positive_diagonal_property(self, rng):
        # 50 random ordinary-kriging datasets: min_ii Kbar > 0.
        for k in range(50):
            local = np.random.default_rng(1000 + k)
            ds = random_dataset(local, n=int(local.integers(5, 20)), d=2)
            model = fit_gp(ds, random_kernel(local, 2), ORD)
            kbar = compute_kbar(model)
            assert np.diag(kbar).min() > 0.0


class TestProjectionBasis:
    def test_ordinary_gives_centering_projector(self):
        F = np.ones((6, 1))
        basis = projection_basis(F)
        expected = np.eye(6) - np.full((6, 6), 1.0 / 6.0)
        np.testing.assert_allclose(basis.Pi, expected, atol=1e-12)

    def test_orthogonality_invariants(self, rng):
        for _ in range(10):
            n, p = 12, 3
            F = rng.standard_normal((n, p))
            basis = projection_basis(F)
            np.testing.assert_allclose(basis.W.T @ basis.W, np.eye(n - p),
                                       atol=1e-10)
            assert np.linalg.norm(F.T @ basis.W) <= 1e-10
            direct = np.eye(n) - F @ np.linalg.inv(F.T @ F) @ F.T
            np.testing.assert_allclose(basis.Pi, direct, atol=1e-10)
            np.testing.assert_allclose(basis.Pi, basis.W @ basis.W.T,
                                       atol=1e-12)

    def test_full_basis_rejected(self, rng):
        F = rng.standard_normal((3, 3))
        with pytest.raises(HypothesisH2Error):
            projection_basis(F)


class TestCheckHypotheses:
    def test_ordinary_trend_h1_h2_true(self, rng):
        ds = random_dataset(rng, n=10, d=2)
        spec = random_kernel(rng, 2)
        report = check_hypotheses(ds, ORD, spec, 0.95)
        assert report.h1 and report.h2

    def test_centered_residuals_h3(self):
        rng = np.random.default_rng(3)
        n = 100
        X = rng.uniform(0, 1, (n, 2))
        y = rng.standard_normal(n)   # centered, no trend
        ds = Dataset(X=X, y=y)
        spec = KernelSpec(KernelFamily.MATERN32, 1.0, np.ones(2),
                          nugget=1e-4)
        report = check_hypotheses(ds, ORD, spec, 0.95)
        # roughly half the projected residuals sit below ~0
        assert abs(report.k_eps - n / 2) < 20
        assert report.h3

    def test_all_positive_residuals_gives_zero_count(self):
        X = np.linspace(0, 1, 8).reshape(-1, 1)
        y = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0])
        ds = Dataset(X=X, y=y)
        spec = KernelSpec(KernelFamily.MATERN32, 1.0, np.ones(1),
                          nugget=1e-12)
        report = check_hypotheses(ds, ORD, spec, 0.95)
        # sigma_eps ~ 0, so k_eps counts (Pi y)_i <= ~0: the negatives.
        assert report.k_eps == 4
        assert report.h3


class TestPersistence:
    def test_round_trip_is_exact(self, rng):
        ds = random_dataset(rng, n=9, d=2)
        spec = random_kernel(rng, 2)
        model = fit_gp(ds, spec, UNI)
        doc = json.loads(json.dumps(model_to_dict(model)))
        back = model_from_dict(doc)
        np.testing.assert_array_equal(back.dataset.X, model.dataset.X)
        np.testing.assert_array_equal(back.dataset.y, model.dataset.y)
        np.testing.assert_array_equal(back.kernel.theta, model.kernel.theta)
        assert back.kernel.sigma2 == model.kernel.sigma2
        assert back.kernel.nugget == model.kernel.nugget
        np.testing.assert_allclose(back.beta_hat, model.beta_hat,
                                   rtol=1e-14)
