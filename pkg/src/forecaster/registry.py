"""Model kinds, the shared parameter registry, and the capability matrix.

The registry is the single source of truth for which parameter keys exist,
their types and ranges, and which model kinds consume them.  The LLM
recommendation flow, job validation, and the UI all validate against it.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ValidationFailed

MODEL_KINDS = (
    "naive_seasonal",
    "arima",
    "exp_smoothing",
    "linear_lagged",
    "nlinear",
    "random_forest",
)


@dataclass(frozen=True)
class ParamDef:
    name: str
    type: type
    min: float | None
    max: float | None
    kinds: tuple[str, ...]
    description: str


# Shared registry.  "epochs" is kept for UI/LLM compatibility even though all
# in-scope models fit in closed form or by simplex search; fits log and ignore it.
PARAM_REGISTRY: dict[str, ParamDef] = {
    "seasonality": ParamDef(
        "seasonality", int, 1, 10_000,
        ("naive_seasonal", "exp_smoothing"),
        "seasonal period in timesteps; also the MASE scaling period",
    ),
    "p": ParamDef("p", int, 0, 50, ("arima",), "autoregressive order"),
    "d": ParamDef("d", int, 0, 3, ("arima",), "differencing order"),
    "q": ParamDef("q", int, 0, 50, ("arima",), "moving-average order"),
    "input_chunk": ParamDef(
        "input_chunk", int, 1, 10_000,
        ("linear_lagged", "nlinear", "random_forest"),
        "number of lagged timesteps fed to the model",
    ),
    "output_chunk": ParamDef(
        "output_chunk", int, 1, 10_000,
        ("linear_lagged", "nlinear", "random_forest"),
        "number of timesteps predicted per model application",
    ),
    "epochs": ParamDef(
        "epochs", int, 1, 100_000,
        ("nlinear",),
        "training epochs; ignored by closed-form fits",
    ),
    "n_trees": ParamDef("n_trees", int, 1, 5_000, ("random_forest",), "trees in the ensemble"),
    "max_depth": ParamDef("max_depth", int, 1, 64, ("random_forest",), "maximum tree depth"),
    "min_leaf": ParamDef("min_leaf", int, 1, 10_000, ("random_forest",), "minimum rows per leaf"),
    "ridge_lambda": ParamDef(
        "ridge_lambda", float, 0.0, 1e9,
        ("linear_lagged", "nlinear"),
        "L2 regularization strength (intercept excluded)",
    ),
    "trend": ParamDef(
        "trend", str, None, None,
        ("exp_smoothing",),
        "trend component: none, additive, or damped",
    ),
    "probabilistic": ParamDef(
        "probabilistic", bool, None, None, MODEL_KINDS,
        "sample many noisy trajectories and average them",
    ),
    "n_samples": ParamDef(
        "n_samples", int, 1, 100_000, MODEL_KINDS,
        "number of sampled trajectories for probabilistic forecasts",
    ),
}

TREND_CHOICES = ("none", "additive", "damped")


@dataclass(frozen=True)
class Capability:
    past_cov: bool
    future_cov: str  # "allowed" | "forbidden"
    static_cov: bool
    multivariate: bool
    multi_group: bool  # True: one global fit; False: fan out per group
    probabilistic: bool


# Fixed capability table.  ARIMA drops future covariates (with a warning);
# exponential smoothing and the naive baseline are strictly univariate and
# fan out per (group, component).  NLinear accepts covariates per the table
# but its window design does not consume them.
CAPABILITIES: dict[str, Capability] = {
    "naive_seasonal": Capability(False, "forbidden", False, False, False, False),
    "arima": Capability(True, "forbidden", False, False, False, True),
    "exp_smoothing": Capability(False, "forbidden", False, False, False, True),
    "linear_lagged": Capability(True, "allowed", True, True, True, True),
    "nlinear": Capability(True, "allowed", True, True, True, True),
    "random_forest": Capability(True, "allowed", True, True, True, True),
}


def validate_params(kind: str, params: dict) -> None:
    """Check a ParamMap against the registry for one model kind.

    Raises ValidationFailed naming the offending key.
    """
    if kind not in MODEL_KINDS:
        raise ValidationFailed(f"unknown model kind {kind!r}", field="kind")
    for key, value in params.items():
        pdef = PARAM_REGISTRY.get(key)
        if pdef is None:
            raise ValidationFailed(f"unknown parameter {key!r}", field=key)
        if kind not in pdef.kinds:
            raise ValidationFailed(f"parameter {key!r} does not apply to {kind}", field=key)
        if pdef.type is bool:
            if not isinstance(value, bool):
                raise ValidationFailed(f"parameter {key!r} must be a bool", field=key)
            continue
        if pdef.type is str:
            if key == "trend" and value not in TREND_CHOICES:
                raise ValidationFailed(
                    f"parameter 'trend' must be one of {TREND_CHOICES}", field=key)
            continue
        if pdef.type is int and (isinstance(value, bool) or not isinstance(value, int)):
            raise ValidationFailed(f"parameter {key!r} must be an int", field=key)
        if pdef.type is float and not isinstance(value, (int, float)):
            raise ValidationFailed(f"parameter {key!r} must be a number", field=key)
        if pdef.min is not None and value < pdef.min:
            raise ValidationFailed(f"parameter {key!r} below minimum {pdef.min}", field=key)
        if pdef.max is not None and value > pdef.max:
            raise ValidationFailed(f"parameter {key!r} above maximum {pdef.max}", field=key)


def clamp_param(key: str, value):
    """Coerce an out-of-range or mistyped value into the registry range.

    Returns (clamped_value, changed).  Unknown keys return (None, True).
    Used for LLM output, which is untrusted.
    """
    pdef = PARAM_REGISTRY.get(key)
    if pdef is None:
        return None, True
    if pdef.type is bool:
        if isinstance(value, bool):
            return value, False
        return bool(value), True
    if pdef.type is str:
        if key == "trend":
            return (value, False) if value in TREND_CHOICES else ("additive", True)
        return str(value), False
    try:
        coerced = pdef.type(value)
    except (TypeError, ValueError):
        return pdef.type(pdef.min if pdef.min is not None else 0), True
    changed = coerced != value
    if pdef.min is not None and coerced < pdef.min:
        return pdef.type(pdef.min), True
    if pdef.max is not None and coerced > pdef.max:
        return pdef.type(pdef.max), True
    return coerced, changed


# Seasonality defaults keyed by inferred frequency label.
SEASONALITY_BY_FREQ = {
    "hourly": 24,
    "daily": 7,
    "weekly": 52,
    "monthly": 12,
    "integer": 1,
    "irregular": 1,
}


def default_params(kind: str, freq_label: str, horizon: int | None = None) -> dict:
    """Heuristic defaults used when neither the user nor the LLM supplies values."""
    k = SEASONALITY_BY_FREQ.get(freq_label, 1)
    out: dict = {}
    if kind in ("naive_seasonal", "exp_smoothing"):
        out["seasonality"] = k
    if kind == "exp_smoothing":
        out["trend"] = "additive"
    if kind == "arima":
        out.update(p=2, d=1, q=1)
    if kind in ("linear_lagged", "nlinear", "random_forest"):
        out["input_chunk"] = max(2 * k, 2)
        out["output_chunk"] = horizon if horizon else max(k, 1)
    if kind in ("linear_lagged", "nlinear"):
        out["ridge_lambda"] = 1e-3
    if kind == "random_forest":
        out.update(n_trees=100, max_depth=8, min_leaf=2)
    return out
