"""LinearLagged, NLinear, and RandomForest on constructed series."""

import numpy as np
import pytest

from helpers import make_bundle, single
from forecaster.errors import SingularSystem, TooFewWindows
from forecaster.models import ModelSpec, fit_model


def forecast_single(model, horizon, future=None):
    return model.forecast(horizon, future)["__all__"]


class TestLinearLagged:
    def test_recovers_coefficient_exactly(self):
        y = np.empty(60)
        y[0] = 0.01
        for t in range(1, 60):
            y[t] = 2.0 * y[t - 1]
        # Scale down to avoid overflow drama: 2^60 is large but finite.
        y = y / y.max()
        model = fit_model(ModelSpec("linear_lagged", {
            "input_chunk": 1, "output_chunk": 1, "ridge_lambda": 0.0}),
            single(y))
        coef = model.weights[0, 0]
        assert abs(coef - 2.0) < 1e-8

    def test_constant_series_intercept_only(self):
        model = fit_model(ModelSpec("linear_lagged", {
            "input_chunk": 2, "output_chunk": 1, "ridge_lambda": 1e-3}),
            single(np.full(30, 4.5)))
        fc = forecast_single(model, 5)[:, 0]
        np.testing.assert_allclose(fc, 4.5, atol=1e-9)

    def test_huge_lambda_shrinks_to_output_mean(self):
        rng = np.random.default_rng(8)
        y = rng.normal(10, 2, 100)
        model = fit_model(ModelSpec("linear_lagged", {
            "input_chunk": 3, "output_chunk": 1, "ridge_lambda": 1e9}),
            single(y))
        assert np.max(np.abs(model.weights[:-1])) < 1e-4
        train_outputs = y[3:]
        fc = forecast_single(model, 3)[:, 0]
        np.testing.assert_allclose(fc, train_outputs.mean(), atol=0.01)

    def test_linear_trend_noiseless(self):
        # A single lag plus intercept fits y_t = y_{t-1} + 1 exactly; more
        # lags of a perfect trend are collinear with the intercept.
        y = np.arange(100, dtype=float)
        train, test = y[:80], y[80:]
        model = fit_model(ModelSpec("linear_lagged", {
            "input_chunk": 1, "output_chunk": 1, "ridge_lambda": 0.0}),
            single(train))
        fc = forecast_single(model, 20)[:, 0]
        rmse = np.sqrt(np.mean((fc - test) ** 2))
        assert rmse < 1e-6

    def test_multistep_chaining_on_noisy_trend(self):
        rng = np.random.default_rng(15)
        y = np.arange(120, dtype=float) + rng.normal(0, 0.1, 120)
        train, test = y[:100], y[100:]
        model = fit_model(ModelSpec("linear_lagged", {
            "input_chunk": 4, "output_chunk": 5, "ridge_lambda": 1e-3}),
            single(train))
        fc = forecast_single(model, 20)[:, 0]
        rmse = np.sqrt(np.mean((fc - test) ** 2))
        assert rmse < 1.0

    def test_future_covariates_used(self):
        # Target equals the future covariate shifted into the output window.
        rng = np.random.default_rng(9)
        f = rng.normal(0, 1, 82)
        y = f[:80] * 2.0
        future = f.reshape(-1, 1)
        bundle = single(y, future={"__all__": future[:82]})
        model = fit_model(ModelSpec("linear_lagged", {
            "input_chunk": 2, "output_chunk": 1, "ridge_lambda": 0.0}),
            bundle)
        fut = {"__all__": future[80:]}
        fc = model.forecast(2, fut)["__all__"][:, 0]
        np.testing.assert_allclose(fc, f[80:] * 2.0, atol=1e-6)

    def test_singular_at_zero_lambda(self):
        # Duplicate lag columns make the normal equations rank deficient.
        y = np.ones(30)
        y[::2] = 2.0
        bundle = single(y, past={"__all__": y.reshape(-1, 1)})
        with pytest.raises(SingularSystem):
            fit_model(ModelSpec("linear_lagged", {
                "input_chunk": 2, "output_chunk": 1, "ridge_lambda": 0.0}),
                bundle)

    def test_too_few_windows(self):
        with pytest.raises(TooFewWindows):
            fit_model(ModelSpec("linear_lagged", {
                "input_chunk": 10, "output_chunk": 10}), single(np.arange(15.0)))

    def test_global_fit_across_groups(self):
        # Same generating rule in both groups; a global fit pools windows.
        bundle = make_bundle({
            "a": 2.0 * np.sin(np.arange(40) / 3.0) + 5,
            "b": 2.0 * np.sin(np.arange(40) / 3.0 + 1) + 5,
        })
        model = fit_model(ModelSpec("linear_lagged", {
            "input_chunk": 4, "output_chunk": 1, "ridge_lambda": 1e-6}),
            bundle)
        fc = model.forecast(3)
        assert set(fc) == {"a", "b"}
        assert fc["a"].shape == (3, 1)


class TestNLinear:
    def test_linear_trend_noiseless(self):
        # Last-value anchoring makes every normalized window identical, so
        # the unpenalized bias absorbs the increments exactly.
        y = np.arange(120, dtype=float)
        train, test = y[:100], y[100:]
        model = fit_model(ModelSpec("nlinear", {
            "input_chunk": 6, "output_chunk": 4, "ridge_lambda": 1e-3}),
            single(train))
        fc = forecast_single(model, 20)[:, 0]
        rmse = np.sqrt(np.mean((fc - test) ** 2))
        assert rmse < 1e-6

    def test_constant_series_exact(self):
        model = fit_model(ModelSpec("nlinear", {
            "input_chunk": 3, "output_chunk": 2, "ridge_lambda": 1e-3}),
            single(np.full(30, 7.25)))
        fc = forecast_single(model, 6)[:, 0]
        np.testing.assert_array_equal(fc, np.full(6, 7.25))

    def test_minimal_window_reduces_to_bias_shift(self):
        # L_in = L_out = 1: the normalized input is identically zero, so the
        # fit is y_T + b with b equal to the mean window increment.
        rng = np.random.default_rng(10)
        y = rng.normal(3.0, 0.5, 200)
        model = fit_model(ModelSpec("nlinear", {
            "input_chunk": 1, "output_chunk": 1, "ridge_lambda": 1e-3}),
            single(y))
        bias = model.maps[0][-1, 0]
        mean_increment = np.diff(y).mean()
        assert bias == pytest.approx(mean_increment, abs=1e-12)
        assert abs(bias) < 3 * np.abs(np.diff(y)).mean()
        fc = forecast_single(model, 1)[0, 0]
        assert fc == pytest.approx(y[-1] + bias)

    def test_ignores_covariates_by_design(self):
        rng = np.random.default_rng(11)
        y = np.arange(50, dtype=float)
        with_cov = single(y, past={"__all__": rng.normal(0, 1, (50, 2))})
        without = single(y)
        spec = ModelSpec("nlinear", {"input_chunk": 3, "output_chunk": 2})
        a = forecast_single(fit_model(spec, with_cov), 5)
        b = forecast_single(fit_model(spec, without), 5)
        np.testing.assert_array_equal(a, b)


class TestRandomForest:
    def test_step_function_rule(self):
        rng = np.random.default_rng(13)
        y = np.empty(400)
        y[0] = 0.2
        for t in range(1, 400):
            base = 0.0 if y[t - 1] < 0.5 else 1.0
            y[t] = np.clip(base + rng.normal(0, 0.02), 0, 1)
        train, test = y[:350], y[350:]
        model = fit_model(ModelSpec("random_forest", {
            "input_chunk": 1, "output_chunk": 1, "n_trees": 100,
            "max_depth": 6, "min_leaf": 2}), single(train), seed=5)
        # One-step-ahead prediction over the held-out region.
        preds = []
        for t in range(350, 400):
            row = np.array([y[t - 1]])
            preds.append(model.forests[0][0].predict_row(row))
        truth = [0.0 if y[t - 1] < 0.5 else 1.0 for t in range(350, 400)]
        mse = np.mean((np.array(preds) - np.array(truth)) ** 2)
        assert mse < 0.01

    def test_constant_target_constant_leaves(self):
        bundle = single(np.full(40, 3.3))
        model = fit_model(ModelSpec("random_forest", {
            "input_chunk": 2, "output_chunk": 1, "n_trees": 5,
            "max_depth": 4, "min_leaf": 1}), bundle, seed=1)
        fc = forecast_single(model, 5)[:, 0]
        np.testing.assert_allclose(fc, 3.3, atol=1e-12)

    def test_seeded_reproducibility(self):
        rng = np.random.default_rng(14)
        y = rng.normal(0, 1, 120)
        spec = ModelSpec("random_forest", {
            "input_chunk": 3, "output_chunk": 2, "n_trees": 10,
            "max_depth": 5, "min_leaf": 2})
        a = forecast_single(fit_model(spec, single(y), seed=7), 6)
        b = forecast_single(fit_model(spec, single(y), seed=7), 6)
        c = forecast_single(fit_model(spec, single(y), seed=8), 6)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_parameter_registry_bounds(self):
        from forecaster.errors import ValidationFailed
        with pytest.raises(ValidationFailed):
            fit_model(ModelSpec("random_forest", {"n_trees": 1, "max_depth": 0}),
                      single(np.arange(30.0)))
