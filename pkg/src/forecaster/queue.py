"""Job lifecycle: validated enqueue, atomic claim, progress callbacks.

The queue itself is rows in the metadata store (see metastore.claim_next);
this module owns parameter validation and the JobRecord wire shapes.
"""

from __future__ import annotations

from .errors import DatasetNotFound, ValidationFailed
from .ingest import parse_csv, validate_roles
from .metastore import MetadataStore
from .models import ModelSpec
from .registry import MODEL_KINDS, validate_params
from .storage import ObjectStore

EVAL_REGIMES = ("holdout", "full_train_forecast", "expanding_window")


def validate_eval_config(eval_cfg: dict) -> dict:
    regime = eval_cfg.get("regime")
    if regime not in EVAL_REGIMES:
        raise ValidationFailed(f"unknown evaluation regime {regime!r}",
                               field="regime")
    out = {"regime": regime,
           "probabilistic": bool(eval_cfg.get("probabilistic", False)),
           "n_samples": int(eval_cfg.get("n_samples", 100))}
    if out["n_samples"] < 1:
        raise ValidationFailed("n_samples must be >= 1", field="n_samples")

    def need_positive(field):
        v = eval_cfg.get(field)
        if not isinstance(v, int) or v < 1:
            raise ValidationFailed(f"{field} must be a positive int", field=field)
        return v

    if regime == "holdout":
        out["test_len"] = need_positive("test_len")
    else:
        out["horizon"] = need_positive("horizon")
    if regime == "expanding_window":
        out["initial_train_len"] = need_positive("initial_train_len")
        out["stride"] = need_positive("stride")
        if out["stride"] > out["horizon"]:
            raise ValidationFailed("stride must not exceed horizon",
                                   field="stride")
    return out


def validate_train_params(params: dict, record: dict, raw: bytes) -> dict:
    roles = params.get("roles") or record.get("roles")
    if not roles:
        raise ValidationFailed("no role assignment for dataset", field="roles")
    validate_roles(record, parse_csv(raw), roles)

    specs = params.get("models")
    if not specs:
        raise ValidationFailed("at least one model must be selected",
                               field="models")
    seen = set()
    for spec in specs:
        kind = spec.get("kind")
        if kind not in MODEL_KINDS:
            raise ValidationFailed(f"unknown model kind {kind!r}", field="kind")
        if kind in seen:
            raise ValidationFailed(f"model {kind!r} selected twice", field="kind")
        seen.add(kind)
        validate_params(kind, spec.get("params", {}))

    eval_cfg = validate_eval_config(params.get("eval") or {})
    return {
        "roles": roles,
        "models": [{"kind": s["kind"], "params": dict(s.get("params", {}))}
                   for s in specs],
        "eval": eval_cfg,
        "seed": int(params.get("seed", 0)),
    }


def models_total_for(params: dict, kind: str) -> int:
    if kind == "forecast":
        return len(params["models"])
    selected = {s["kind"] for s in params["models"]}
    return len(selected) + (0 if "naive_seasonal" in selected else 1)


def enqueue(meta: MetadataStore, store: ObjectStore, kind: str,
            dataset_id: str, owner_id: str, params: dict) -> str:
    """Validate parameters and persist a queued JobRecord."""
    record = meta.get_dataset(dataset_id)
    if record is None or record["owner_id"] != owner_id:
        raise DatasetNotFound(dataset_id)
    raw = store.get(f"{record['owner_id']}/{record['filename']}")

    if kind == "train":
        validated = validate_train_params(params, record, raw)
    elif kind == "forecast":
        validated = validate_forecast_params(params, meta, store)
    else:
        raise ValidationFailed(f"unknown job kind {kind!r}", field="kind")

    return meta.create_job(kind, dataset_id, owner_id, validated,
                           models_total_for(validated, kind))


def validate_forecast_params(params: dict, meta: MetadataStore,
                             store: ObjectStore) -> dict:
    source_id = params.get("source_job_id")
    source = meta.get_job(source_id) if source_id else None
    if source is None:
        raise ValidationFailed("source_job_id does not name a job",
                               field="source_job_id")
    if source["state"] != "completed":
        raise ValidationFailed("source training job has not completed",
                               field="source_job_id")
    kinds = params.get("models") or []
    if not kinds:
        raise ValidationFailed("select at least one trained model",
                               field="models")
    for kind in kinds:
        if not store.exists(f"{source_id}/models/{kind}.json"):
            raise ValidationFailed(f"no stored model {kind!r} for job",
                                   field="models")
    horizon = params.get("horizon")
    if not isinstance(horizon, int) or horizon < 1:
        raise ValidationFailed("horizon must be a positive int", field="horizon")
    out = {
        "source_job_id": source_id,
        "models": list(kinds),
        "horizon": horizon,
        # The worker needs the source job's role map to rebuild the bundle.
        "roles": source["params"]["roles"],
        "seed": int(params.get("seed", source["params"].get("seed", 0))),
    }
    if params.get("covariates_key"):
        out["covariates_key"] = params["covariates_key"]
    return out
