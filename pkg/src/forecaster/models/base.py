"""Uniform fit/predict interface for the model zoo.

Every fitted model stores enough context (window tails, recursion states)
to forecast from the training cutoff without re-reading data, and exposes
per-group StepPredictors: ``predict_next`` proposes the next timestep,
``advance`` feeds back what "happened" (the prediction itself for
deterministic forecasts, a noisy sample for probabilistic ones).  Chaining
through predictors is exactly equivalent to each model's closed-form
multi-step forecast.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..registry import CAPABILITIES, validate_params
from ..series import SeriesBundle


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    params: dict

    def validate(self) -> None:
        validate_params(self.kind, self.params)

    def to_json(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_json(cls, obj: dict) -> "ModelSpec":
        return cls(obj["kind"], dict(obj.get("params", {})))


@dataclass
class FitPlan:
    """How a model kind maps onto a bundle: one global fit or a fan-out."""

    kind: str
    sub_fits: list[tuple[str, int]] | None  # (group_key, component_idx); None = global
    use_past: bool
    use_future: bool
    use_static: bool
    warnings: list[str] = field(default_factory=list)

    @property
    def n_fits(self) -> int:
        return len(self.sub_fits) if self.sub_fits is not None else 1


def check_capabilities(spec: ModelSpec, bundle: SeriesBundle) -> FitPlan:
    """Build the fan-out plan and record covariate-drop warnings.

    Covariates a kind cannot consume are dropped with a warning rather than
    failing the job, so every selected model still runs.
    """
    cap = CAPABILITIES[spec.kind]
    warnings = []
    use_past = cap.past_cov and bool(bundle.past_cov_names)
    if bundle.past_cov_names and not cap.past_cov:
        warnings.append(
            f"{spec.kind}: past covariates {bundle.past_cov_names} dropped "
            "(not supported by this model)")
    use_future = cap.future_cov == "allowed" and bool(bundle.future_cov_names)
    if bundle.future_cov_names and cap.future_cov == "forbidden":
        warnings.append(
            f"{spec.kind}: future covariates {bundle.future_cov_names} dropped "
            "(not supported by this model)")
    use_static = cap.static_cov and bool(bundle.static_cov_names)
    if bundle.static_cov_names and not cap.static_cov:
        warnings.append(
            f"{spec.kind}: static covariates dropped (not supported by this model)")

    if cap.multi_group and cap.multivariate:
        sub_fits = None
    else:
        sub_fits = [(g.group_key, c)
                    for g in bundle.groups
                    for c in range(len(bundle.component_names))]
    return FitPlan(kind=spec.kind, sub_fits=sub_fits, use_past=use_past,
                   use_future=use_future, use_static=use_static, warnings=warnings)


class StepPredictor:
    """One group's stateful forecaster: propose a step, then feed one back."""

    def predict_next(self) -> np.ndarray:  # shape [C]
        raise NotImplementedError

    def advance(self, observed: np.ndarray) -> None:
        raise NotImplementedError


class FittedModel:
    """Base for fitted models; subclasses set KIND and implement payloads."""

    KIND = ""

    def __init__(self, spec: ModelSpec, group_keys: list[str],
                 component_names: list[str]):
        self.spec = spec
        self.group_keys = list(group_keys)
        self.component_names = list(component_names)

    # --- forecasting -----------------------------------------------------

    def predictor(self, group_key: str,
                  future_cov: np.ndarray | None = None) -> StepPredictor:
        raise NotImplementedError

    def residual_sigma(self, group_key: str) -> np.ndarray:  # shape [C]
        raise NotImplementedError

    def forecast(self, horizon: int,
                 future_cov: dict[str, np.ndarray] | None = None
                 ) -> dict[str, np.ndarray]:
        """Deterministic forecast per group, shape [horizon, C] (scaled space)."""
        out = {}
        for key in self.group_keys:
            fc = None if future_cov is None else future_cov.get(key)
            pred = self.predictor(key, fc)
            rows = []
            for _ in range(horizon):
                step = np.asarray(pred.predict_next(), dtype=float)
                rows.append(step)
                pred.advance(step)
            out[key] = np.vstack(rows)
        return out

    # --- serialization ----------------------------------------------------

    def payload(self) -> dict:
        raise NotImplementedError

    @classmethod
    def from_payload(cls, spec: ModelSpec, payload: dict) -> "FittedModel":
        raise NotImplementedError


def extend_future(matrix: np.ndarray | None, needed: int, width: int) -> np.ndarray:
    """Pad a future-covariate matrix to ``needed`` rows by linear trend.

    Missing matrices become zeros; short ones are extrapolated from their
    last two rows (or held when only one row exists).
    """
    if width == 0:
        return np.zeros((needed, 0))
    if matrix is None or len(matrix) == 0:
        return np.zeros((needed, width))
    m = np.asarray(matrix, dtype=float)
    if m.ndim == 1:
        m = m.reshape(-1, width)
    if m.shape[0] >= needed:
        return m[:needed]
    if m.shape[0] == 1:
        pad = np.repeat(m[-1:], needed - 1, axis=0)
        return np.vstack([m, pad])
    slope = m[-1] - m[-2]
    extra = np.vstack([m[-1] + slope * (i + 1) for i in range(needed - m.shape[0])])
    return np.vstack([m, extra])


def matrix_to_json(m: np.ndarray) -> list:
    return np.asarray(m, dtype=float).tolist()


def matrix_from_json(obj, width: int | None = None) -> np.ndarray:
    arr = np.asarray(obj, dtype=float)
    if width is not None and arr.size == 0:
        return arr.reshape(0, width)
    return arr
