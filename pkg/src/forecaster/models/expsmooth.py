"""Additive Holt-Winters smoothing with optional (damped) trend.

Level/trend/seasonal states start from a classical-decomposition estimate
over the first two seasonal cycles; smoothing weights are then chosen by
minimizing in-sample one-step squared error with a bounded Nelder-Mead
search in [0, 1]^k.  K == 1 disables the seasonal component.  Additive
only: multiplicative variants break on zero-containing series.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize

from ..errors import TooShort
from ..series import SeriesBundle
from .base import FitPlan, FittedModel, ModelSpec, StepPredictor

TREND_NONE, TREND_ADDITIVE, TREND_DAMPED = "none", "additive", "damped"


def _initial_state(y: np.ndarray, k: int, trend: str):
    if k >= 2:
        m1 = float(np.mean(y[:k]))
        m2 = float(np.mean(y[k:2 * k]))
        b0 = (m2 - m1) / k if trend != TREND_NONE else 0.0
        a = m1 - b0 * (k - 1) / 2.0
        level = a - b0
        seas = np.zeros(k)
        for i in range(k):
            vals = [y[i + j * k] - (a + b0 * (i + j * k)) for j in (0, 1)]
            seas[i] = float(np.mean(vals))
        correction = float(np.mean(seas))
        seas -= correction
        level += correction
    else:
        seas = np.zeros(1)
        if trend != TREND_NONE:
            b0 = float(y[1] - y[0])
            level = float(y[0]) - b0
        else:
            b0 = 0.0
            level = float(y[0])
    return level, b0, seas


def _run_filter(y: np.ndarray, k: int, trend: str, alpha: float, beta: float,
                gamma: float, phi: float, level: float, b: float,
                seas: np.ndarray):
    """One pass of the component recursions; returns states and residuals."""
    seas = seas.copy()
    e = np.zeros(len(y))
    for t in range(len(y)):
        ph = t % k
        pred = level + phi * b + seas[ph]
        e[t] = y[t] - pred
        new_level = alpha * (y[t] - seas[ph]) + (1 - alpha) * (level + phi * b)
        if trend != TREND_NONE:
            b = beta * (new_level - level) + (1 - beta) * phi * b
        if k > 1:
            seas[ph] = gamma * (y[t] - new_level) + (1 - gamma) * seas[ph]
        level = new_level
    return level, b, seas, e


class _HwState:
    def __init__(self, k, trend, alpha, beta, gamma, phi, level, b, seas,
                 phase, sigma):
        self.k = int(k)
        self.trend = trend
        self.alpha, self.beta, self.gamma, self.phi = (
            float(alpha), float(beta), float(gamma), float(phi))
        self.level, self.b = float(level), float(b)
        self.seas = np.asarray(seas, dtype=float)
        self.phase = int(phase)
        self.sigma = float(sigma)

    def to_json(self) -> dict:
        return {"k": self.k, "trend": self.trend, "alpha": self.alpha,
                "beta": self.beta, "gamma": self.gamma, "phi": self.phi,
                "level": self.level, "b": self.b, "seas": self.seas.tolist(),
                "phase": self.phase, "sigma": self.sigma}

    @classmethod
    def from_json(cls, obj) -> "_HwState":
        return cls(obj["k"], obj["trend"], obj["alpha"], obj["beta"],
                   obj["gamma"], obj["phi"], obj["level"], obj["b"],
                   obj["seas"], obj["phase"], obj["sigma"])


class _HwPredictor:
    def __init__(self, s: _HwState):
        self.s = s
        self.level, self.b = s.level, s.b
        self.seas = s.seas.copy()
        self.phase = s.phase

    def predict_next(self) -> float:
        s = self.s
        return self.level + s.phi * self.b + self.seas[self.phase % s.k]

    def advance(self, y_obs: float) -> None:
        s = self.s
        ph = self.phase % s.k
        new_level = (s.alpha * (y_obs - self.seas[ph])
                     + (1 - s.alpha) * (self.level + s.phi * self.b))
        if s.trend != TREND_NONE:
            self.b = s.beta * (new_level - self.level) + (1 - s.beta) * s.phi * self.b
        if s.k > 1:
            self.seas[ph] = s.gamma * (y_obs - new_level) + (1 - s.gamma) * self.seas[ph]
        self.level = new_level
        self.phase += 1


class HoltWintersPredictor(StepPredictor):
    def __init__(self, states: list[_HwState]):
        self.columns = [_HwPredictor(s) for s in states]

    def predict_next(self) -> np.ndarray:
        return np.array([c.predict_next() for c in self.columns])

    def advance(self, observed: np.ndarray) -> None:
        for col, v in zip(self.columns, np.atleast_1d(observed)):
            col.advance(float(v))


class HoltWintersModel(FittedModel):
    KIND = "exp_smoothing"

    def __init__(self, spec, group_keys, component_names,
                 states: dict[str, list[_HwState]]):
        super().__init__(spec, group_keys, component_names)
        self.states = states

    def predictor(self, group_key, future_cov=None) -> HoltWintersPredictor:
        return HoltWintersPredictor(self.states[group_key])

    def residual_sigma(self, group_key) -> np.ndarray:
        return np.array([s.sigma for s in self.states[group_key]])

    def payload(self) -> dict:
        return {"group_keys": self.group_keys,
                "component_names": self.component_names,
                "states": {g: [s.to_json() for s in lst]
                           for g, lst in self.states.items()}}

    @classmethod
    def from_payload(cls, spec, payload) -> "HoltWintersModel":
        return cls(spec, payload["group_keys"], payload["component_names"],
                   {g: [_HwState.from_json(s) for s in lst]
                    for g, lst in payload["states"].items()})


def _fit_one(y: np.ndarray, k: int, trend: str) -> _HwState:
    n = len(y)
    if k >= 2 and n < 2 * k:
        raise TooShort(f"need at least {2 * k} points for seasonality {k}, got {n}")
    if n < 2:
        raise TooShort("need at least 2 points")
    level0, b0, seas0 = _initial_state(y, k, trend)

    names = ["alpha"]
    if trend != TREND_NONE:
        names.append("beta")
    if k > 1:
        names.append("gamma")
    if trend == TREND_DAMPED:
        names.append("phi")
    x0 = {"alpha": 0.3, "beta": 0.1, "gamma": 0.1, "phi": 0.95}

    def unpack(vec):
        vals = dict(zip(names, vec))
        return (vals["alpha"], vals.get("beta", 0.0), vals.get("gamma", 0.0),
                vals.get("phi", 1.0))

    def loss(vec):
        alpha, beta, gamma, phi = unpack(vec)
        *_, e = _run_filter(y, k, trend, alpha, beta, gamma, phi,
                            level0, b0, seas0)
        val = float(np.sum(e ** 2))
        return val if np.isfinite(val) else 1e15

    bounds = [(1e-4, 0.9999)] * len(names)
    result = minimize(loss, np.array([x0[nm] for nm in names]),
                      method="Nelder-Mead", bounds=bounds,
                      options={"xatol": 1e-6, "fatol": 1e-10, "maxiter": 2000})
    alpha, beta, gamma, phi = unpack(result.x)
    level, b, seas, e = _run_filter(y, k, trend, alpha, beta, gamma, phi,
                                    level0, b0, seas0)
    return _HwState(k=k, trend=trend, alpha=alpha, beta=beta, gamma=gamma,
                    phi=phi, level=level, b=b, seas=seas, phase=n % k,
                    sigma=float(np.std(e)))


def fit_exp_smoothing(bundle: SeriesBundle, spec: ModelSpec, seed: int = 0,
                      plan: FitPlan | None = None) -> HoltWintersModel:
    k = int(spec.params.get("seasonality", 1))
    trend = spec.params.get("trend", TREND_ADDITIVE)
    states = {
        g.group_key: [_fit_one(g.target[:, c], k, trend)
                      for c in range(g.target.shape[1])]
        for g in bundle.groups
    }
    return HoltWintersModel(spec, bundle.group_keys, bundle.component_names, states)
