"""Job execution: the full train/evaluate/report pipeline and new forecasts.

A training job builds the bundle, fits a scaler on the training region
only, runs every planned model (naive baseline first) under the selected
evaluation regime, computes normalized + de-normalized metrics, posts
progress after each model, and writes results and model artifacts to the
object store.  One model's failure is logged and isolated; the job itself
fails only on pipeline-level faults.
"""

from __future__ import annotations

import json
import zlib

import numpy as np

from . import metrics as metrics_mod
from .errors import CovariateSchemaMismatch, ForecasterError, ModelArtifactMissing
from .ingest import parse_csv
from .models import (
    ModelSpec,
    check_capabilities,
    deterministic_predict,
    fit_model,
    model_envelope,
    model_from_envelope,
    probabilistic_predict,
)
from .registry import CAPABILITIES, SEASONALITY_BY_FREQ, default_params
from .series import (
    GROUP_ALL,
    ScalerParams,
    SeriesBundle,
    apply_scaler,
    build_bundle,
    expanding_schedule,
    fit_scaler,
    fit_scaler_per_group,
    holdout_split,
    slice_bundle,
    stitch_forecasts,
)
from .storage import ObjectStore
from .timebase import parse_number, parse_timestamp


def stable_seed(seed: int, kind: str) -> int:
    """Deterministic per-model seed; independent of process hash salting."""
    return zlib.crc32(f"{seed}:{kind}".encode()) & 0x7FFFFFFF


def _noop_progress(models_done=None, lines=None, final_state=None, error=None):
    return "ok"


def resolve_model_specs(params: dict, freq_label: str,
                        horizon: int) -> list[ModelSpec]:
    """User selections plus the always-added naive baseline, baseline first."""
    selected = params["models"]
    specs = []
    if all(s["kind"] != "naive_seasonal" for s in selected):
        specs.append(("naive_seasonal", {}))
    specs.extend((s["kind"], dict(s.get("params", {}))) for s in selected)
    out = []
    for kind, user_params in specs:
        merged = dict(default_params(kind, freq_label, horizon))
        merged.update(user_params)
        out.append(ModelSpec(kind, merged))
    return out


def _render_times(axis, offsets) -> list:
    return [axis.render(int(o)) for o in offsets]


def _series_json(bundle: SeriesBundle, per_group_values: dict[str, np.ndarray],
                 per_group_times: dict[str, np.ndarray]) -> dict:
    out = {}
    for key, values in per_group_values.items():
        entry = {"times": _render_times(bundle.axis, per_group_times[key])}
        for ci, name in enumerate(bundle.component_names):
            entry[name] = [float(v) for v in np.asarray(values)[:, ci]]
        out[key] = entry
    return out


def _denorm_matrix(values: np.ndarray, scaler, group_key: str,
                   component_names: list[str]) -> np.ndarray:
    params = scaler[group_key] if isinstance(scaler, dict) else scaler
    cols = [params.invert(values[:, ci], name)
            for ci, name in enumerate(component_names)]
    return np.column_stack(cols)


def _scaler_json(scaler) -> dict:
    if isinstance(scaler, dict):
        return {"scope": "local",
                "params": {g: p.to_json() for g, p in scaler.items()}}
    return {"scope": "global", "params": scaler.to_json()}


def _scaler_from_json(obj: dict):
    if obj.get("scope") == "local":
        return {g: ScalerParams.from_json(p) for g, p in obj["params"].items()}
    return ScalerParams.from_json(obj["params"])


class TrainingRun:
    """Shared state for one training job across its models."""

    def __init__(self, job: dict, dataset_record: dict, store: ObjectStore,
                 progress_fn=None):
        self.job = job
        self.record = dataset_record
        self.store = store
        self.progress = progress_fn or _noop_progress
        self.warnings: list[str] = []
        self.log: list[str] = []

    def _log(self, line: str) -> None:
        self.log.append(line)
        self.progress(lines=[line])

    def run(self) -> dict:
        job = self.job
        params = job["params"]
        raw = self.store.get(
            f"{self.record['owner_id']}/{self.record['filename']}")
        bundle = build_bundle(self.record, parse_csv(raw), params["roles"])
        eval_cfg = params["eval"]
        regime = eval_cfg["regime"]
        horizon = eval_cfg.get("horizon") or eval_cfg.get("test_len")
        mase_k_default = SEASONALITY_BY_FREQ.get(bundle.freq.label, 1)

        specs = resolve_model_specs(params, bundle.freq.label, horizon)
        self._log(f"job {job['job_id']}: {len(specs)} models, regime {regime}")

        # Scalers fit on the training region only.
        if regime == "holdout":
            train_raw, _ = holdout_split(bundle, eval_cfg["test_len"])
            scaler_region = train_raw
        elif regime == "expanding_window":
            scaler_region = slice_bundle(bundle, 0,
                                         eval_cfg["initial_train_len"])
        else:
            scaler_region = bundle
        local_scaler = fit_scaler_per_group(scaler_region)
        global_scaler = fit_scaler(scaler_region)
        self._local_scaler = local_scaler
        self._global_scaler = global_scaler
        scaled_local = apply_scaler(bundle, local_scaler)
        scaled_global = apply_scaler(bundle, global_scaler)

        models_json = {}
        done = 0
        for spec in specs:
            try:
                entry = self._run_model(spec, bundle, scaled_local,
                                        scaled_global, local_scaler,
                                        global_scaler, eval_cfg,
                                        mase_k_default)
            except ForecasterError as exc:
                entry = {"status": "failed", "error": f"{exc.code}: {exc}"}
                self._log(f"model {spec.kind} failed: {exc}")
            except Exception as exc:  # noqa: BLE001 - isolation contract
                entry = {"status": "failed", "error": str(exc)}
                self._log(f"model {spec.kind} failed: {exc}")
            models_json[spec.kind] = entry
            done += 1
            self.progress(models_done=done)

        artifact = {
            "job_id": job["job_id"],
            "kind": "train",
            "status": "completed",
            "models": models_json,
            "warnings": self.warnings,
            "log": self.log,
            "train": self._train_series_json(bundle, eval_cfg),
        }
        blob = json.dumps(artifact, allow_nan=False).encode()
        self.store.put(f"{job['job_id']}/results.json", blob)
        return artifact

    def _train_series_json(self, bundle: SeriesBundle, eval_cfg: dict) -> dict:
        regime = eval_cfg["regime"]
        values, times = {}, {}
        for g in bundle.groups:
            if regime == "holdout":
                end = g.length - eval_cfg["test_len"]
            elif regime == "expanding_window":
                end = eval_cfg["initial_train_len"]
            else:
                end = g.length
            values[g.group_key] = g.target[:end]
            times[g.group_key] = g.times[:end]
        return _series_json(bundle, values, times)

    def _run_model(self, spec: ModelSpec, bundle: SeriesBundle,
                   scaled_local: SeriesBundle, scaled_global: SeriesBundle,
                   local_scaler, global_scaler, eval_cfg: dict,
                   mase_k_default: int) -> dict:
        plan = check_capabilities(spec, bundle)
        for w in plan.warnings:
            if w not in self.warnings:
                self.warnings.append(w)
                self._log(f"warning: {w}")
        is_local = plan.sub_fits is not None
        scaled = scaled_local if is_local else scaled_global
        scaler = local_scaler if is_local else global_scaler
        seed = stable_seed(self.job["params"].get("seed", 0), spec.kind)
        probabilistic = (eval_cfg.get("probabilistic", False)
                         and CAPABILITIES[spec.kind].probabilistic)
        n_samples = eval_cfg.get("n_samples", 100)
        mase_k = int(spec.params.get("seasonality", mase_k_default))

        regime = eval_cfg["regime"]
        if regime == "holdout":
            result = self._holdout(spec, plan, scaled, seed, eval_cfg,
                                   probabilistic, n_samples, save_model=True)
        elif regime == "full_train_forecast":
            result = self._full_train(spec, plan, scaled, seed, eval_cfg,
                                      probabilistic, n_samples)
        else:
            result = self._expanding(spec, plan, scaled, seed, eval_cfg,
                                     probabilistic, n_samples)
        preds, actuals, pred_times, train_rows, quantiles = result

        entry: dict = {"status": "ok"}
        denorm_preds = {
            g: _denorm_matrix(p, scaler, g, bundle.component_names)
            for g, p in preds.items()
        }
        entry["predictions"] = _series_json(bundle, denorm_preds, pred_times)
        if quantiles is not None:
            entry["quantiles"] = self._quantiles_json(bundle, quantiles,
                                                      pred_times, scaler)
        if actuals is not None:
            entry["actuals"] = _series_json(
                bundle,
                {g: _denorm_matrix(a, scaler, g, bundle.component_names)
                 for g, a in actuals.items()},
                pred_times)
            entry["metrics"] = self._metrics(
                bundle, scaled, preds, actuals, train_rows, scaler, mase_k)
        return entry

    # --- regimes --------------------------------------------------------

    def _predict(self, model, scaled: SeriesBundle, horizon: int,
                 start_row: dict[str, int], probabilistic: bool,
                 n_samples: int, seed: int):
        future = {}
        for g in scaled.groups:
            start = start_row[g.group_key]
            future[g.group_key] = g.future_cov[start:]
        if probabilistic:
            fc = probabilistic_predict(model, horizon, n_samples, seed, future)
            preds = {g: v.point for g, v in fc.items()}
            quantiles = {g: v.quantiles for g, v in fc.items()}
            return preds, quantiles
        fc = deterministic_predict(model, horizon, future)
        return {g: v.point for g, v in fc.items()}, None

    def _holdout(self, spec, plan, scaled, seed, eval_cfg, probabilistic,
                 n_samples, save_model=False):
        test_len = eval_cfg["test_len"]
        train_scaled, test_scaled = holdout_split(scaled, test_len)
        model = fit_model(spec, train_scaled, seed=seed, plan=plan)
        if save_model:
            self._save_model(model, plan, train_scaled)
        start_row = {g.group_key: g.length for g in train_scaled.groups}
        preds, quantiles = self._predict(model, train_scaled, test_len,
                                         start_row, probabilistic, n_samples,
                                         seed)
        actuals = {g.group_key: g.target for g in test_scaled.groups}
        pred_times = {g.group_key: g.times for g in test_scaled.groups}
        train_rows = {g.group_key: g.length for g in train_scaled.groups}
        return preds, actuals, pred_times, train_rows, quantiles

    def _full_train(self, spec, plan, scaled, seed, eval_cfg, probabilistic,
                    n_samples):
        horizon = eval_cfg["horizon"]
        model = fit_model(spec, scaled, seed=seed, plan=plan)
        self._save_model(model, plan, scaled)
        start_row = {g.group_key: g.length for g in scaled.groups}
        preds, quantiles = self._predict(model, scaled, horizon, start_row,
                                         probabilistic, n_samples, seed)
        pred_times = {g.group_key: np.arange(g.times[-1] + 1,
                                             g.times[-1] + 1 + horizon)
                      for g in scaled.groups}
        return preds, None, pred_times, None, quantiles

    def _expanding(self, spec, plan, scaled, seed, eval_cfg, probabilistic,
                   n_samples):
        t_min = scaled.min_length
        schedule = expanding_schedule(t_min, eval_cfg["initial_train_len"],
                                      eval_cfg["stride"], eval_cfg["horizon"])
        window_preds: dict[str, list[np.ndarray]] = {
            g.group_key: [] for g in scaled.groups}
        window_quants: dict[str, list[dict]] = {
            g.group_key: [] for g in scaled.groups}
        model = None
        for train_end, fc_start, fc_end in schedule.windows:
            train_scaled = slice_bundle(scaled, 0, train_end)
            model = fit_model(spec, train_scaled, seed=seed, plan=plan)
            start_row = {g.group_key: train_end for g in scaled.groups}
            preds, quantiles = self._predict(model, scaled,
                                             fc_end - fc_start, start_row,
                                             probabilistic, n_samples, seed)
            for g, p in preds.items():
                window_preds[g].append(p)
                if quantiles is not None:
                    window_quants[g].append(quantiles[g])
        self._save_model(model, plan, scaled)

        preds, quantiles = {}, ({} if probabilistic else None)
        for g in scaled.groups:
            key = g.group_key
            preds[key] = stitch_forecasts(schedule, window_preds[key])
            if probabilistic:
                quantiles[key] = {
                    q: stitch_forecasts(schedule,
                                        [w[q] for w in window_quants[key]])
                    for q in ("p10", "p50", "p90")
                }
        actuals = {g.group_key: g.target[schedule.initial_train_len:t_min]
                   for g in scaled.groups}
        pred_times = {g.group_key: g.times[schedule.initial_train_len:t_min]
                      for g in scaled.groups}
        train_rows = {g.group_key: schedule.initial_train_len
                      for g in scaled.groups}
        return preds, actuals, pred_times, train_rows, quantiles

    # --- reporting --------------------------------------------------------

    def _metrics(self, bundle, scaled, preds, actuals, train_rows, scaler,
                 mase_k) -> dict:
        cells_scaled, cells_raw = {}, {}
        for g_raw, g_scaled in zip(bundle.groups, scaled.groups):
            key = g_raw.group_key
            train_len = train_rows[key]
            p_scaled = preds[key]
            a_scaled = actuals[key]
            p_raw = _denorm_matrix(p_scaled, scaler, key, bundle.component_names)
            a_raw = _denorm_matrix(a_scaled, scaler, key, bundle.component_names)
            cells_scaled[key] = {}
            cells_raw[key] = {}
            for ci, name in enumerate(bundle.component_names):
                cells_scaled[key][name] = metrics_mod.compute_cell(
                    p_scaled[:, ci], a_scaled[:, ci],
                    g_scaled.target[:train_len, ci], mase_k)
                cells_raw[key][name] = metrics_mod.compute_cell(
                    p_raw[:, ci], a_raw[:, ci],
                    g_raw.target[:train_len, ci], mase_k)
        return metrics_mod.build_report(cells_scaled, cells_raw).to_json()

    def _quantiles_json(self, bundle, quantiles, pred_times, scaler) -> dict:
        out = {}
        for key, qs in quantiles.items():
            entry = {"times": _render_times(bundle.axis, pred_times[key])}
            for ci, name in enumerate(bundle.component_names):
                entry[name] = {
                    q: [float(v) for v in
                        _denorm_matrix(qs[q], scaler, key,
                                       bundle.component_names)[:, ci]]
                    for q in ("p10", "p50", "p90")
                }
            out[key] = entry
        return out

    def _save_model(self, model, plan, train_scaled) -> None:
        is_local = plan.sub_fits is not None
        scaler = self._local_scaler if is_local else self._global_scaler
        envelope = model_envelope(model, _scaler_json(scaler))
        envelope["train_rows"] = {g.group_key: g.length
                                  for g in train_scaled.groups}
        self.store.put(
            f"{self.job['job_id']}/models/{model.spec.kind}.json",
            json.dumps(envelope, allow_nan=False).encode())


def run_training_job(job: dict, dataset_record: dict, store: ObjectStore,
                     progress_fn=None) -> dict:
    run = TrainingRun(job, dataset_record, store, progress_fn)
    return run.run()


# --- forecast jobs -----------------------------------------------------------


def parse_covariate_csv(raw: bytes, future_names: list[str], time_col: str,
                        group_col: str | None, axis, horizon: int,
                        start_offset: dict[str, int]) -> dict[str, np.ndarray]:
    """Uploaded future-covariate values, placed on the horizon grid per group.

    Columns must match the trained future-covariate names; a time column
    and (for grouped datasets) the grouping column are honored when present.
    Missing steps are imputed along a linear trend.
    """
    parsed = parse_csv(raw)
    extra = [c for c in parsed.header
             if c not in future_names and c not in (time_col, group_col)]
    missing = [c for c in future_names if c not in parsed.header]
    if missing or extra:
        raise CovariateSchemaMismatch(
            f"covariate columns must be {future_names}; "
            f"missing {missing}, unexpected {extra}")

    has_time = time_col in parsed.header
    groups: dict[str, dict[int, list[float]]] = {}
    group_values = (parsed.column(group_col)
                    if group_col and group_col in parsed.header else None)
    for i in range(parsed.row_count):
        key = group_values[i] if group_values is not None else GROUP_ALL
        if has_time:
            cell = parsed.column(time_col)[i]
            t = parse_timestamp(cell) if axis.kind != "numeric" else \
                parse_number(cell)
            if t is None:
                raise CovariateSchemaMismatch(f"bad time value {cell!r}")
            step = int(round(axis.offset_of(t))) - start_offset.get(key, 0)
        else:
            step = len(groups.get(key, {}))
        row = [parse_number(parsed.column(c)[i]) for c in future_names]
        groups.setdefault(key, {})[step] = row

    out = {}
    for key, by_step in groups.items():
        grid = np.full((horizon, len(future_names)), np.nan)
        for step, row in by_step.items():
            if 0 <= step < horizon:
                grid[step] = [np.nan if v is None else v for v in row]
        for j in range(len(future_names)):
            col = grid[:, j]
            if np.isnan(col).all():
                raise CovariateSchemaMismatch(
                    f"no usable values for {future_names[j]!r}")
            grid[:, j] = _linear_fill(col)
        out[key] = grid
    return out


def _linear_fill(col: np.ndarray) -> np.ndarray:
    """Linear interpolation/extrapolation with no gap-length limit."""
    v = col.copy()
    idx = np.flatnonzero(~np.isnan(v))
    if idx.size == 1:
        return np.full_like(v, v[idx[0]])
    nan_idx = np.flatnonzero(np.isnan(v))
    v[nan_idx] = np.interp(nan_idx, idx, v[idx])
    first, last = idx[0], idx[-1]
    if first > 0:
        slope = (v[idx[1]] - v[first]) / (idx[1] - first)
        v[:first] = v[first] - slope * np.arange(first, 0, -1)
    if last < v.size - 1:
        slope = (v[last] - v[idx[-2]]) / (last - idx[-2])
        v[last + 1:] = v[last] + slope * np.arange(1, v.size - 1 - last + 1)
    return v


def run_forecast_job(job: dict, dataset_record: dict, store: ObjectStore,
                     progress_fn=None) -> dict:
    """Predict new timesteps past the series end with stored trained models."""
    progress = progress_fn or _noop_progress
    params = job["params"]
    source_id = params["source_job_id"]
    horizon = params["horizon"]
    log: list[str] = []
    warnings: list[str] = []

    raw = store.get(f"{dataset_record['owner_id']}/{dataset_record['filename']}")
    bundle = build_bundle(dataset_record, parse_csv(raw), params["roles"])

    time_col = next(n for n, r in params["roles"].items() if r == "time")
    group_col = next((n for n, r in params["roles"].items()
                      if r == "grouping"), None)

    uploaded = None
    if params.get("covariates_key"):
        cov_raw = store.get(params["covariates_key"])
        start_offset = {g.group_key: int(g.times[-1]) + 1
                        for g in bundle.groups}
        uploaded = parse_covariate_csv(
            cov_raw, bundle.future_cov_names, time_col, group_col,
            bundle.axis, horizon, start_offset)

    models_json = {}
    done = 0
    for kind in params["models"]:
        key = f"{source_id}/models/{kind}.json"
        if not store.exists(key):
            raise ModelArtifactMissing(key)
        envelope = json.loads(store.get(key))
        model, scaler_json = model_from_envelope(envelope)
        scaler = _scaler_from_json(scaler_json)
        train_rows = envelope.get("train_rows", {})

        scaled = apply_scaler(bundle, scaler)
        future = {}
        for g in scaled.groups:
            gkey = g.group_key
            rows = [g.future_cov[g.length:]]
            if uploaded is not None and gkey in uploaded:
                p = (scaler[gkey] if isinstance(scaler, dict) else scaler)
                cols = [p.apply(uploaded[gkey][:, j], name)
                        for j, name in enumerate(bundle.future_cov_names)]
                rows = [np.column_stack(cols)] if cols else rows
            future[gkey] = rows[0]

        preds = {}
        for g in scaled.groups:
            gkey = g.group_key
            pred = model.predictor(gkey, future.get(gkey))
            # Advance through observations recorded after the model's
            # training cutoff so forecasts start at the series end.
            for row in g.target[train_rows.get(gkey, g.length):]:
                pred.predict_next()
                pred.advance(row)
            steps = []
            for _ in range(horizon):
                step = np.asarray(pred.predict_next(), dtype=float)
                steps.append(step)
                pred.advance(step)
            preds[gkey] = np.vstack(steps)

        denorm = {g: _denorm_matrix(p, scaler, g, bundle.component_names)
                  for g, p in preds.items()}
        pred_times = {g.group_key: np.arange(g.times[-1] + 1,
                                             g.times[-1] + 1 + horizon)
                      for g in bundle.groups}
        models_json[kind] = {
            "status": "ok",
            "predictions": _series_json(bundle, denorm, pred_times),
        }
        done += 1
        progress(models_done=done)
        log.append(f"forecast {kind}: {horizon} steps")

    artifact = {
        "job_id": job["job_id"],
        "kind": "forecast",
        "status": "completed",
        "models": models_json,
        "warnings": warnings,
        "log": log,
    }
    blob = json.dumps(artifact, allow_nan=False).encode()
    store.put(f"{job['job_id']}/results.json", blob)
    n = len([k for k in store.list_keys(f"{source_id}/")
             if "/forecast-" in k])
    store.put(f"{source_id}/forecast-{n + 1}.json", blob)
    return artifact


def execute_job(job: dict, dataset_record: dict, store: ObjectStore,
                progress_fn=None) -> dict:
    if job["kind"] == "forecast":
        return run_forecast_job(job, dataset_record, store, progress_fn)
    return run_training_job(job, dataset_record, store, progress_fn)
