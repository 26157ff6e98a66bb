"""Model zoo: uniform fit/predict over six forecasting model kinds."""

from __future__ import annotations

from ..errors import ValidationFailed
from ..series import SeriesBundle
from .arima import ArimaModel, fit_arima
from .base import FitPlan, FittedModel, ModelSpec, check_capabilities
from .expsmooth import HoltWintersModel, fit_exp_smoothing
from .forest import RandomForestModel, fit_random_forest
from .linear import LinearLaggedModel, NLinearModel, fit_linear_lagged, fit_nlinear
from .naive import NaiveSeasonalModel, fit_naive_seasonal
from .probabilistic import GroupForecast, deterministic_predict, probabilistic_predict

FITTERS = {
    "naive_seasonal": fit_naive_seasonal,
    "arima": fit_arima,
    "exp_smoothing": fit_exp_smoothing,
    "linear_lagged": fit_linear_lagged,
    "nlinear": fit_nlinear,
    "random_forest": fit_random_forest,
}

MODEL_CLASSES: dict[str, type[FittedModel]] = {
    cls.KIND: cls
    for cls in (NaiveSeasonalModel, ArimaModel, HoltWintersModel,
                LinearLaggedModel, NLinearModel, RandomForestModel)
}

ARTIFACT_FORMAT_VERSION = 1


def fit_model(spec: ModelSpec, bundle: SeriesBundle, seed: int = 0,
              plan: FitPlan | None = None) -> FittedModel:
    spec.validate()
    if plan is None:
        plan = check_capabilities(spec, bundle)
    return FITTERS[spec.kind](bundle, spec, seed=seed, plan=plan)


def model_envelope(model: FittedModel, scaler_json: dict) -> dict:
    """Self-describing artifact: versioned spec + scaler + fitted payload."""
    return {
        "format_version": ARTIFACT_FORMAT_VERSION,
        "spec": model.spec.to_json(),
        "scaler": scaler_json,
        "payload": model.payload(),
    }


def model_from_envelope(envelope: dict) -> tuple[FittedModel, dict]:
    version = envelope.get("format_version")
    if version != ARTIFACT_FORMAT_VERSION:
        raise ValidationFailed(f"unsupported model artifact version {version!r}")
    spec = ModelSpec.from_json(envelope["spec"])
    cls = MODEL_CLASSES.get(spec.kind)
    if cls is None:
        raise ValidationFailed(f"unknown model kind {spec.kind!r}")
    return cls.from_payload(spec, envelope["payload"]), envelope.get("scaler", {})

__all__ = [
    "FITTERS",
    "MODEL_CLASSES",
    "ModelSpec",
    "FitPlan",
    "FittedModel",
    "GroupForecast",
    "check_capabilities",
    "deterministic_predict",
    "probabilistic_predict",
    "fit_model",
    "model_envelope",
    "model_from_envelope",
]
