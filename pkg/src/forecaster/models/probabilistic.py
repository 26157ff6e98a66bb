"""Probabilistic forecasts: many noisy trajectories, averaged per timestep.

Each sampled trajectory adds Gaussian noise scaled by the model's in-sample
residual sigma at every autoregressive step and feeds the noisy value back
through the chained prediction.  The point forecast is the per-timestep
sample mean; p10/p50/p90 sample quantiles ride along.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NotFitted
from .base import FittedModel


@dataclass
class GroupForecast:
    point: np.ndarray                     # [H, C]
    quantiles: dict[str, np.ndarray] | None = None  # p10/p50/p90 -> [H, C]


def deterministic_predict(model: FittedModel, horizon: int,
                          future_cov: dict[str, np.ndarray] | None = None
                          ) -> dict[str, GroupForecast]:
    fc = model.forecast(horizon, future_cov)
    return {g: GroupForecast(point=m) for g, m in fc.items()}


def probabilistic_predict(model: FittedModel, horizon: int, n_samples: int,
                          seed: int,
                          future_cov: dict[str, np.ndarray] | None = None
                          ) -> dict[str, GroupForecast]:
    if not model.group_keys:
        raise NotFitted("model has no fitted groups")
    rng = np.random.default_rng(seed)
    c = len(model.component_names)
    out = {}
    for key in model.group_keys:
        sigma = np.asarray(model.residual_sigma(key), dtype=float)
        fc = None if future_cov is None else future_cov.get(key)
        samples = np.empty((n_samples, horizon, c))
        for s in range(n_samples):
            pred = model.predictor(key, fc)
            for h in range(horizon):
                step = np.asarray(pred.predict_next(), dtype=float)
                noisy = step + rng.normal(0.0, 1.0, size=c) * sigma
                samples[s, h] = noisy
                pred.advance(noisy)
        point = samples.mean(axis=0)
        q10, q50, q90 = np.quantile(samples, [0.1, 0.5, 0.9], axis=0)
        out[key] = GroupForecast(point=point,
                                 quantiles={"p10": q10, "p50": q50, "p90": q90})
    return out
