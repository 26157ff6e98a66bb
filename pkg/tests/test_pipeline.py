"""Training/forecast pipeline: regimes, artifacts, determinism, imputation."""

import datetime as dt
import json

import jsonschema
import numpy as np
import pytest

from forecaster import errors
from forecaster.ingest import validate_and_register
from forecaster.metastore import MetadataStore
from forecaster.pipeline import (
    execute_job,
    parse_covariate_csv,
    resolve_model_specs,
    run_forecast_job,
    run_training_job,
    stable_seed,
)
from forecaster.queue import enqueue
from forecaster.storage import LocalStore

SCHEMA = json.loads(
    open("src/forecaster/schemas/results.schema.json", "rb").read())


def synthetic_csv(n=200, seed=0, with_future=False, groups=None):
    rng = np.random.default_rng(seed)
    d0 = dt.date(2021, 1, 1)
    header = ["date"] + (["city"] if groups else []) + ["rides", "temp"]
    if with_future:
        header.append("promo")
    lines = [",".join(header)]
    for g_i, g in enumerate(groups or [None]):
        temp = 15 + 8 * np.sin(np.arange(n) * 2 * np.pi / 365) \
            + rng.normal(0, 1.5, n)
        base = 200 + 40 * g_i
        weekly = np.array([0, 5, 8, 6, 4, -20, -25])
        rides = (base + 2.5 * temp + weekly[np.arange(n) % 7]
                 + rng.normal(0, 4, n))
        for i in range(n):
            row = [(d0 + dt.timedelta(days=i)).isoformat()]
            if g:
                row.append(g)
            row += [f"{rides[i]:.3f}", f"{temp[i]:.3f}"]
            if with_future:
                row.append(str(i % 7))
            lines.append(",".join(row))
    return ("\n".join(lines) + "\n").encode()


@pytest.fixture
def env(tmp_path):
    meta = MetadataStore(tmp_path / "meta.db")
    store = LocalStore(tmp_path / "objects")
    return meta, store


def register(meta, store, raw, roles, name="data.csv"):
    record = validate_and_register(raw, "u1", name, meta, store)
    meta.set_roles(record["dataset_id"], roles)
    return meta.get_dataset(record["dataset_id"])


ROLES = {"date": "time", "rides": "target", "temp": "past_covariate"}
ROLES_FUTURE = {**ROLES, "promo": "future_covariate"}


def make_job(meta, store, record, params, kind="train"):
    job_id = enqueue(meta, store, kind, record["dataset_id"], "u1", params)
    return meta.get_job(job_id)


BASE_PARAMS = {
    "models": [
        {"kind": "linear_lagged", "params": {"input_chunk": 14,
                                             "output_chunk": 7}},
        {"kind": "exp_smoothing", "params": {"seasonality": 7}},
    ],
    "eval": {"regime": "holdout", "test_len": 28},
    "seed": 11,
}


class TestTrainingJob:
    def test_holdout_produces_valid_artifact(self, env):
        meta, store = env
        record = register(meta, store, synthetic_csv(), ROLES)
        job = make_job(meta, store, record, BASE_PARAMS)
        artifact = run_training_job(job, record, store)
        jsonschema.validate(artifact, SCHEMA)
        # naive baseline added automatically
        assert set(artifact["models"]) == {"naive_seasonal", "linear_lagged",
                                           "exp_smoothing"}
        for entry in artifact["models"].values():
            assert entry["status"] == "ok"
            preds = entry["predictions"]["__all__"]
            assert len(preds["times"]) == 28
            assert len(preds["rides"]) == 28
            agg = entry["metrics"]["metrics"]
            assert agg["normalized"]["rmse"]["value"] is not None
            assert agg["denormalized"]["mae"]["value"] >= (
                agg["normalized"]["mae"]["value"])

    def test_progress_posted_per_model(self, env):
        meta, store = env
        record = register(meta, store, synthetic_csv(), ROLES)
        job = make_job(meta, store, record, BASE_PARAMS)
        seen = []

        def progress(models_done=None, lines=None, final_state=None,
                     error=None):
            if models_done is not None:
                seen.append(models_done)
            return "ok"

        run_training_job(job, record, store, progress)
        assert seen == [1, 2, 3]
        assert job["models_total"] == 3

    def test_expanding_window_counts(self, env):
        meta, store = env
        record = register(meta, store, synthetic_csv(n=130), ROLES)
        params = {
            "models": [{"kind": "linear_lagged",
                        "params": {"input_chunk": 7, "output_chunk": 10}}],
            "eval": {"regime": "expanding_window", "initial_train_len": 100,
                     "stride": 10, "horizon": 10},
            "seed": 3,
        }
        job = make_job(meta, store, record, params)
        artifact = run_training_job(job, record, store)
        jsonschema.validate(artifact, SCHEMA)
        preds = artifact["models"]["linear_lagged"]["predictions"]["__all__"]
        # evaluation covers timesteps 100..129
        assert len(preds["times"]) == 30
        assert preds["times"][0] == "2021-04-11"  # day offset 100

    def test_full_train_forecast_has_no_actuals(self, env):
        meta, store = env
        record = register(meta, store, synthetic_csv(), ROLES)
        params = {
            "models": [{"kind": "nlinear", "params": {"input_chunk": 14,
                                                      "output_chunk": 7}}],
            "eval": {"regime": "full_train_forecast", "horizon": 14},
            "seed": 5,
        }
        job = make_job(meta, store, record, params)
        artifact = run_training_job(job, record, store)
        jsonschema.validate(artifact, SCHEMA)
        entry = artifact["models"]["nlinear"]
        assert "actuals" not in entry
        assert "metrics" not in entry
        assert len(entry["predictions"]["__all__"]["times"]) == 14
        # forecast times continue past the series end
        assert entry["predictions"]["__all__"]["times"][0] == "2021-07-20"

    def test_deterministic_rerun_byte_identical(self, env):
        meta, store = env
        record = register(meta, store, synthetic_csv(), ROLES)
        params = dict(BASE_PARAMS)
        params["models"] = params["models"] + [
            {"kind": "random_forest", "params": {
                "input_chunk": 7, "output_chunk": 7, "n_trees": 10,
                "max_depth": 5, "min_leaf": 2}}]
        job1 = make_job(meta, store, record, params)
        job2 = make_job(meta, store, record, params)
        a1 = run_training_job(job1, record, store)
        a2 = run_training_job(job2, record, store)
        for kind in a1["models"]:
            p1 = a1["models"][kind]["predictions"]
            p2 = a2["models"][kind]["predictions"]
            assert p1 == p2
            assert (a1["models"][kind].get("metrics")
                    == a2["models"][kind].get("metrics"))

    def test_one_bad_model_does_not_fail_job(self, env):
        meta, store = env
        record = register(meta, store, synthetic_csv(n=60), ROLES)
        params = {
            "models": [
                # Seasonality far longer than the series: this fit fails.
                {"kind": "exp_smoothing", "params": {"seasonality": 40}},
                {"kind": "linear_lagged", "params": {"input_chunk": 7,
                                                     "output_chunk": 7}},
            ],
            "eval": {"regime": "holdout", "test_len": 10},
            "seed": 1,
        }
        job = make_job(meta, store, record, params)
        artifact = run_training_job(job, record, store)
        jsonschema.validate(artifact, SCHEMA)
        assert artifact["status"] == "completed"
        assert artifact["models"]["exp_smoothing"]["status"] == "failed"
        assert "error" in artifact["models"]["exp_smoothing"]
        assert artifact["models"]["linear_lagged"]["status"] == "ok"
        assert any("exp_smoothing failed" in line for line in artifact["log"])

    def test_grouped_dataset_reports_per_group(self, env):
        meta, store = env
        raw = synthetic_csv(n=120, groups=["bergen", "oslo"])
        roles = {"date": "time", "city": "grouping", "rides": "target",
                 "temp": "past_covariate"}
        record = register(meta, store, raw, roles)
        params = {
            "models": [{"kind": "exp_smoothing",
                        "params": {"seasonality": 7}}],
            "eval": {"regime": "holdout", "test_len": 14},
            "seed": 2,
        }
        job = make_job(meta, store, record, params)
        artifact = run_training_job(job, record, store)
        jsonschema.validate(artifact, SCHEMA)
        entry = artifact["models"]["exp_smoothing"]
        assert set(entry["predictions"]) == {"bergen", "oslo"}
        assert set(entry["metrics"]["per_group"]) == {"bergen", "oslo"}

    def test_arima_future_covariate_warning(self, env):
        meta, store = env
        raw = synthetic_csv(with_future=True)
        record = register(meta, store, raw, ROLES_FUTURE)
        params = {
            "models": [{"kind": "arima", "params": {"p": 1, "d": 0, "q": 0}}],
            "eval": {"regime": "holdout", "test_len": 14},
            "seed": 2,
        }
        job = make_job(meta, store, record, params)
        artifact = run_training_job(job, record, store)
        assert any("future covariates" in w for w in artifact["warnings"])

    def test_probabilistic_quantiles_present_and_ordered(self, env):
        meta, store = env
        record = register(meta, store, synthetic_csv(), ROLES)
        params = {
            "models": [{"kind": "linear_lagged",
                        "params": {"input_chunk": 7, "output_chunk": 7}}],
            "eval": {"regime": "holdout", "test_len": 14,
                     "probabilistic": True, "n_samples": 25},
            "seed": 9,
        }
        job = make_job(meta, store, record, params)
        artifact = run_training_job(job, record, store)
        jsonschema.validate(artifact, SCHEMA)
        q = artifact["models"]["linear_lagged"]["quantiles"]["__all__"]["rides"]
        p10, p50, p90 = q["p10"], q["p50"], q["p90"]
        assert all(a <= b <= c for a, b, c in zip(p10, p50, p90))


class TestForecastJob:
    def completed_training(self, meta, store, with_future=False, n=200):
        raw = synthetic_csv(n=n, with_future=with_future)
        roles = ROLES_FUTURE if with_future else ROLES
        record = register(meta, store, raw, roles)
        params = {
            "models": [{"kind": "linear_lagged",
                        "params": {"input_chunk": 14, "output_chunk": 7}}],
            "eval": {"regime": "full_train_forecast", "horizon": 7},
            "seed": 4,
        }
        job = make_job(meta, store, record, params)
        run_training_job(job, record, store)
        meta.post_progress(job["job_id"], final_state="completed")
        return record, job

    def test_forecast_from_trained_models(self, env):
        meta, store = env
        record, train_job = self.completed_training(meta, store)
        params = {"source_job_id": train_job["job_id"],
                  "models": ["linear_lagged"], "horizon": 10}
        job = make_job(meta, store, record, params, kind="forecast")
        artifact = run_forecast_job(job, record, store)
        jsonschema.validate(artifact, SCHEMA)
        preds = artifact["models"]["linear_lagged"]["predictions"]["__all__"]
        assert len(preds["times"]) == 10
        assert preds["times"][0] == "2021-07-20"
        # appended under the source job for the UI
        assert store.exists(f"{train_job['job_id']}/forecast-1.json")

    def test_missing_future_covariates_are_imputed(self, env):
        meta, store = env
        record, train_job = self.completed_training(meta, store,
                                                    with_future=True)
        params = {"source_job_id": train_job["job_id"],
                  "models": ["linear_lagged"], "horizon": 5}
        job = make_job(meta, store, record, params, kind="forecast")
        artifact = run_forecast_job(job, record, store)
        assert artifact["models"]["linear_lagged"]["status"] == "ok"

    def test_covariate_schema_mismatch(self, env):
        meta, store = env
        record, train_job = self.completed_training(meta, store,
                                                    with_future=True)
        store.put("u1/cov.csv", b"wrong_name\n1\n2\n3\n")
        params = {"source_job_id": train_job["job_id"],
                  "models": ["linear_lagged"], "horizon": 3,
                  "covariates_key": "u1/cov.csv"}
        job = make_job(meta, store, record, params, kind="forecast")
        with pytest.raises(errors.CovariateSchemaMismatch):
            run_forecast_job(job, record, store)

    def test_forecast_job_against_missing_models_rejected(self, env):
        meta, store = env
        record, train_job = self.completed_training(meta, store)
        params = {"source_job_id": train_job["job_id"],
                  "models": ["random_forest"], "horizon": 3}
        with pytest.raises(errors.ValidationFailed):
            make_job(meta, store, record, params, kind="forecast")


class TestCovariateImputation:
    def test_midpoint_linear_interpolation(self):
        from forecaster.timebase import TimeAxis
        axis = TimeAxis(kind="numeric", origin=0.0, step=1.0)
        raw = b"t,promo\n100,1\n102,3\n"
        out = parse_covariate_csv(raw, ["promo"], "t", None, axis, 3,
                                  {"__all__": 100})
        np.testing.assert_allclose(out["__all__"][:, 0], [1.0, 2.0, 3.0])

    def test_rows_without_time_column_are_consecutive(self):
        from forecaster.timebase import TimeAxis
        axis = TimeAxis(kind="numeric", origin=0.0, step=1.0)
        raw = b"promo\n5\n6\n7\n"
        out = parse_covariate_csv(raw, ["promo"], "t", None, axis, 3,
                                  {"__all__": 0})
        np.testing.assert_allclose(out["__all__"][:, 0], [5, 6, 7])


class TestEnqueueValidation:
    def test_unknown_param_key_named(self, env):
        meta, store = env
        record = register(meta, store, synthetic_csv(), ROLES)
        params = {
            "models": [{"kind": "arima", "params": {"bogus": 1}}],
            "eval": {"regime": "holdout", "test_len": 5},
        }
        with pytest.raises(errors.ValidationFailed) as exc:
            make_job(meta, store, record, params)
        assert "bogus" in str(exc.value)

    def test_models_total_includes_baseline(self, env):
        meta, store = env
        record = register(meta, store, synthetic_csv(), ROLES)
        job = make_job(meta, store, record, BASE_PARAMS)
        assert job["models_total"] == 3
        assert job["state"] == "queued"

    def test_dataset_not_found(self, env):
        meta, store = env
        with pytest.raises(errors.DatasetNotFound):
            enqueue(meta, store, "train", "ds-nope", "u1", BASE_PARAMS)

    def test_stable_seed_is_stable(self):
        assert stable_seed(11, "arima") == stable_seed(11, "arima")
        assert stable_seed(11, "arima") != stable_seed(12, "arima")
        assert stable_seed(11, "arima") != stable_seed(11, "nlinear")

    def test_resolve_specs_defaults(self):
        specs = resolve_model_specs(
            {"models": [{"kind": "linear_lagged", "params": {}}]},
            "daily", 10)
        assert specs[0].kind == "naive_seasonal"
        assert specs[0].params["seasonality"] == 7
        assert specs[1].params["input_chunk"] == 14
        assert specs[1].params["output_chunk"] == 10
