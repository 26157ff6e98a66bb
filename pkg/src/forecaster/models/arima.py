"""ARIMA(p, d, q) with optional exogenous past-covariate regressors.

Estimation is conditional sum of squares: difference d times, regress out
exogenous terms, then pick AR/MA coefficients minimizing one-step-ahead
in-sample squared error with a Nelder-Mead simplex.  Forecasting iterates
the recursion with future shocks at zero and exogenous regressors held at
their last observed value.  The constant term is included only when d == 0,
so integrated models carry no drift.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import minimize

from ..errors import NonFiniteLoss, TooShort
from ..series import SeriesBundle
from .base import FitPlan, FittedModel, ModelSpec, StepPredictor

MIN_EXTRA_LEN = 20
_BIG = 1e15


def _difference(y: np.ndarray, d: int) -> np.ndarray:
    return np.diff(y, n=d) if d else y.copy()


def _integrate_next(z: float, tail: list[float], d: int) -> float:
    """Next level implied by the d-th difference ``z`` and the level tail."""
    y = z
    for k in range(1, d + 1):
        y += (-1) ** (k + 1) * math.comb(d, k) * tail[-k]
    return y


def _css_residuals(z: np.ndarray, c: float, phi: np.ndarray,
                   theta: np.ndarray) -> np.ndarray:
    p, q = len(phi), len(theta)
    n = len(z)
    e = np.zeros(n)
    for t in range(p, n):
        acc = c
        for i in range(p):
            acc += phi[i] * z[t - 1 - i]
        for j in range(q):
            if t - 1 - j >= 0:
                acc += theta[j] * e[t - 1 - j]
        e[t] = z[t] - acc
    return e


class _SeriesState:
    """Fitted recursion state for one (group, component) series."""

    def __init__(self, c, phi, theta, beta, d, z_hist, e_hist, y_tail,
                 exog_term, sigma):
        self.c = float(c)
        self.phi = np.asarray(phi, dtype=float)
        self.theta = np.asarray(theta, dtype=float)
        self.beta = np.asarray(beta, dtype=float)
        self.d = int(d)
        self.z_hist = [float(v) for v in z_hist]
        self.e_hist = [float(v) for v in e_hist]
        self.y_tail = [float(v) for v in y_tail]
        self.exog_term = float(exog_term)
        self.sigma = float(sigma)

    def to_json(self) -> dict:
        return {
            "c": self.c, "phi": self.phi.tolist(), "theta": self.theta.tolist(),
            "beta": self.beta.tolist(), "d": self.d, "z_hist": self.z_hist,
            "e_hist": self.e_hist, "y_tail": self.y_tail,
            "exog_term": self.exog_term, "sigma": self.sigma,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "_SeriesState":
        return cls(obj["c"], obj["phi"], obj["theta"], obj["beta"], obj["d"],
                   obj["z_hist"], obj["e_hist"], obj["y_tail"],
                   obj["exog_term"], obj["sigma"])


class _SeriesPredictor:
    def __init__(self, state: _SeriesState):
        s = state
        self.c, self.phi, self.theta, self.d = s.c, s.phi, s.theta, s.d
        self.exog_term = s.exog_term
        self.z = list(s.z_hist)
        self.e = list(s.e_hist)
        self.tail = list(s.y_tail)
        self._last_z_pred: float | None = None

    def predict_next(self) -> float:
        acc = self.c
        for i in range(len(self.phi)):
            if len(self.z) > i:
                acc += self.phi[i] * self.z[-1 - i]
        for j in range(len(self.theta)):
            if len(self.e) > j:
                acc += self.theta[j] * self.e[-1 - j]
        self._last_z_pred = acc
        w = acc + self.exog_term
        return _integrate_next(w, self.tail, self.d) if self.d else w

    def advance(self, y_obs: float) -> None:
        if self.d:
            levels = self.tail[-self.d:] + [y_obs]
            w_obs = np.diff(np.asarray(levels, dtype=float), n=self.d)[-1]
            self.tail.append(float(y_obs))
            self.tail = self.tail[-max(self.d, 1):]
        else:
            w_obs = float(y_obs)
        z_obs = w_obs - self.exog_term
        z_pred = self._last_z_pred if self._last_z_pred is not None else z_obs
        self.z.append(float(z_obs))
        self.e.append(float(z_obs - z_pred))
        self.z = self.z[-max(len(self.phi), 1):]
        self.e = self.e[-max(len(self.theta), 1):]
        self._last_z_pred = None


class ArimaPredictor(StepPredictor):
    def __init__(self, states: list[_SeriesState]):
        self.columns = [_SeriesPredictor(s) for s in states]

    def predict_next(self) -> np.ndarray:
        return np.array([col.predict_next() for col in self.columns])

    def advance(self, observed: np.ndarray) -> None:
        for col, v in zip(self.columns, np.atleast_1d(observed)):
            col.advance(float(v))


class ArimaModel(FittedModel):
    KIND = "arima"

    def __init__(self, spec, group_keys, component_names,
                 states: dict[str, list[_SeriesState]]):
        super().__init__(spec, group_keys, component_names)
        self.states = states

    def predictor(self, group_key, future_cov=None) -> ArimaPredictor:
        return ArimaPredictor(self.states[group_key])

    def residual_sigma(self, group_key) -> np.ndarray:
        return np.array([s.sigma for s in self.states[group_key]])

    def payload(self) -> dict:
        return {
            "group_keys": self.group_keys,
            "component_names": self.component_names,
            "states": {g: [s.to_json() for s in lst]
                       for g, lst in self.states.items()},
        }

    @classmethod
    def from_payload(cls, spec, payload) -> "ArimaModel":
        return cls(spec, payload["group_keys"], payload["component_names"],
                   {g: [_SeriesState.from_json(s) for s in lst]
                    for g, lst in payload["states"].items()})


def _fit_one(y: np.ndarray, p: int, d: int, q: int,
             exog: np.ndarray | None) -> _SeriesState:
    n = len(y)
    if n < p + d + q + MIN_EXTRA_LEN:
        raise TooShort(
            f"series of {n} too short for ARIMA({p},{d},{q}); "
            f"need {p + d + q + MIN_EXTRA_LEN}")
    w = _difference(y, d)

    beta = np.zeros(0)
    exog_term = 0.0
    z = w
    if exog is not None and exog.shape[1] > 0:
        x = exog[d:] if d else exog
        design = np.column_stack([np.ones(len(x)), x])
        coef, *_ = np.linalg.lstsq(design, w, rcond=None)
        z = w - design @ coef
        beta = coef
        exog_term = float(coef[0] + exog[-1] @ coef[1:])
        use_c = False
    else:
        use_c = d == 0

    # Initial simplex point: OLS autoregression, zero MA terms.
    x0 = []
    if use_c:
        x0.append(float(np.mean(z)))
    if p > 0:
        rows = np.column_stack([z[p - 1 - i: len(z) - 1 - i] for i in range(p)])
        cols = [np.ones(len(rows)), *rows.T] if use_c else list(rows.T)
        ar_design = np.column_stack(cols)
        coef, *_ = np.linalg.lstsq(ar_design, z[p:], rcond=None)
        if use_c:
            x0 = [float(coef[0])] + [float(v) for v in coef[1:]]
        else:
            x0 = [float(v) for v in coef]
    x0.extend([0.0] * q)

    def unpack(vec):
        i = 0
        c = 0.0
        if use_c:
            c = vec[0]
            i = 1
        return c, vec[i:i + p], vec[i + p:i + p + q]

    def loss(vec):
        c, phi, theta = unpack(vec)
        e = _css_residuals(z, c, phi, theta)
        val = float(np.sum(e[p:] ** 2))
        return val if np.isfinite(val) else _BIG

    if x0:
        result = minimize(loss, np.asarray(x0, dtype=float), method="Nelder-Mead",
                          options={"xatol": 1e-8, "fatol": 1e-12,
                                   "maxiter": 4000, "maxfev": 4000})
        best = result.x
        if not np.all(np.isfinite(best)) or loss(best) >= _BIG:
            raise NonFiniteLoss("ARIMA simplex search diverged")
    else:
        best = np.zeros(0)

    c, phi, theta = unpack(best)
    e = _css_residuals(z, c, phi, theta)
    sigma = float(np.std(e[p:])) if len(e) > p else 0.0
    return _SeriesState(
        c=c, phi=phi, theta=theta, beta=beta, d=d,
        z_hist=list(z[-max(p, 1):]),
        e_hist=list(e[-max(q, 1):]) if q else [],
        y_tail=list(y[-max(d, 1):]) if d else [],
        exog_term=exog_term, sigma=sigma)


def fit_arima(bundle: SeriesBundle, spec: ModelSpec, seed: int = 0,
              plan: FitPlan | None = None) -> ArimaModel:
    p = int(spec.params.get("p", 2))
    d = int(spec.params.get("d", 1))
    q = int(spec.params.get("q", 1))
    use_past = plan.use_past if plan is not None else bool(bundle.past_cov_names)
    states: dict[str, list[_SeriesState]] = {}
    for g in bundle.groups:
        exog = g.past_cov if (use_past and g.past_cov.shape[1]) else None
        states[g.group_key] = [
            _fit_one(g.target[:, c], p, d, q, exog)
            for c in range(g.target.shape[1])
        ]
    return ArimaModel(spec, bundle.group_keys, bundle.component_names, states)
