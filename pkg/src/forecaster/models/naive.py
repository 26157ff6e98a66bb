"""Naive seasonal baseline: cyclically repeat the last K observed values."""

from __future__ import annotations

import numpy as np

from ..errors import SeriesShorterThanK
from ..series import SeriesBundle
from .base import FittedModel, ModelSpec, StepPredictor, matrix_from_json, matrix_to_json


class NaivePredictor(StepPredictor):
    def __init__(self, rings: np.ndarray):  # [K, C]
        self.rings = rings
        self.phase = 0

    def predict_next(self) -> np.ndarray:
        step = self.rings[self.phase % self.rings.shape[0]]
        self.phase += 1
        return step.copy()

    def advance(self, observed: np.ndarray) -> None:
        # The cycle is frozen at the training cutoff; later values never
        # change the baseline.
        pass


class NaiveSeasonalModel(FittedModel):
    KIND = "naive_seasonal"

    def __init__(self, spec: ModelSpec, group_keys, component_names,
                 rings: dict[str, np.ndarray], sigma: dict[str, np.ndarray]):
        super().__init__(spec, group_keys, component_names)
        self.rings = rings
        self.sigma = sigma

    def predictor(self, group_key, future_cov=None) -> NaivePredictor:
        return NaivePredictor(self.rings[group_key])

    def residual_sigma(self, group_key) -> np.ndarray:
        return self.sigma[group_key]

    def payload(self) -> dict:
        return {
            "k": int(self.spec.params.get("seasonality", 1)),
            "group_keys": self.group_keys,
            "component_names": self.component_names,
            "rings": {g: matrix_to_json(r) for g, r in self.rings.items()},
            "sigma": {g: matrix_to_json(s) for g, s in self.sigma.items()},
        }

    @classmethod
    def from_payload(cls, spec: ModelSpec, payload: dict) -> "NaiveSeasonalModel":
        return cls(
            spec, payload["group_keys"], payload["component_names"],
            {g: matrix_from_json(r) for g, r in payload["rings"].items()},
            {g: matrix_from_json(s) for g, s in payload["sigma"].items()},
        )


def fit_naive_seasonal(bundle: SeriesBundle, spec: ModelSpec, seed: int = 0,
                       plan=None) -> NaiveSeasonalModel:
    k = int(spec.params.get("seasonality", 1))
    rings, sigma = {}, {}
    for g in bundle.groups:
        t = g.length
        if t < k:
            raise SeriesShorterThanK(
                f"group {g.group_key!r} has {t} rows, seasonality {k}")
        rings[g.group_key] = g.target[t - k:].copy()
        if t > k:
            resid = g.target[k:] - g.target[:-k]
            sigma[g.group_key] = resid.std(axis=0)
        else:
            sigma[g.group_key] = np.zeros(g.target.shape[1])
    return NaiveSeasonalModel(spec, bundle.group_keys, bundle.component_names,
                              rings, sigma)
