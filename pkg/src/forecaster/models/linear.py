"""Lagged-window models: ridge linear regression and N-Linear.

Both slide windows over every group (global fit).  The linear model's
design rows hold target lags, past-covariate lags, the future-covariate
values spanning the output window, static covariates, and an intercept;
all C x L_out outputs are solved jointly by ridge least squares with the
intercept excluded from the penalty.  N-Linear subtracts each window's
last value, applies one linear map per component, and adds it back.
Horizons beyond L_out chain autoregressively block by block.
"""

from __future__ import annotations

import numpy as np

from ..errors import SingularSystem, TooFewWindows
from ..series import GroupSeries, SeriesBundle
from .base import (
    FitPlan,
    FittedModel,
    ModelSpec,
    StepPredictor,
    extend_future,
    matrix_from_json,
    matrix_to_json,
)


def _lag_features(target_win: np.ndarray, past_win: np.ndarray,
                  future_block: np.ndarray, static: np.ndarray) -> np.ndarray:
    """Feature row for one window; most-recent row of each window is lag 1."""
    return np.concatenate([
        target_win[::-1].ravel(),
        past_win[::-1].ravel(),
        future_block.ravel(),
        static.ravel(),
    ])


def window_design(bundle: SeriesBundle, l_in: int, l_out: int, use_past: bool,
                  use_future: bool, use_static: bool
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Stack training windows from all groups into (X, Y).

    Y columns are step-major: output step 0 components first.  Groups are
    iterated in bundle order (sorted keys), so the design is independent of
    upload row order.
    """
    xs, ys = [], []
    for g in bundle.groups:
        t = g.length
        past = g.past_cov if use_past else np.zeros((t, 0))
        future = g.future_cov if use_future else np.zeros((t, 0))
        static = g.static_cov if use_static else np.zeros(0)
        for origin in range(l_in, t - l_out + 1):
            fut_block = (future[origin:origin + l_out]
                         if use_future else np.zeros((l_out, 0)))
            xs.append(_lag_features(g.target[origin - l_in:origin],
                                    past[origin - l_in:origin],
                                    fut_block, static))
            ys.append(g.target[origin:origin + l_out].ravel())
    if not xs:
        raise TooFewWindows(
            f"no training windows: need group length >= {l_in + l_out}")
    return np.vstack(xs), np.vstack(ys)


def ridge_solve(x: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """Normal equations with an unpenalized trailing intercept column."""
    design = np.column_stack([x, np.ones(len(x))])
    gram = design.T @ design
    penalty = np.eye(design.shape[1]) * lam
    penalty[-1, -1] = 0.0
    try:
        if lam == 0.0:
            # Reject rank-deficient systems instead of least-norm fudging.
            if np.linalg.matrix_rank(gram) < gram.shape[0]:
                raise np.linalg.LinAlgError("rank deficient")
        weights = np.linalg.solve(gram + penalty, design.T @ y)
    except np.linalg.LinAlgError:
        raise SingularSystem(
            "design matrix is rank deficient; increase ridge_lambda")
    return weights


class WindowPredictor(StepPredictor):
    """Chains block predictions: a model application yields L_out steps."""

    def __init__(self, apply_fn, target_win: np.ndarray, past_win: np.ndarray,
                 future_all: np.ndarray, static: np.ndarray, l_out: int):
        self.apply_fn = apply_fn
        self.target_win = target_win.copy()
        self.past_win = past_win.copy()
        self.future_all = future_all
        self.static = static
        self.l_out = l_out
        self.offset = 0
        self.block: np.ndarray | None = None
        self.block_pos = 0

    def predict_next(self) -> np.ndarray:
        if self.block is None or self.block_pos >= self.l_out:
            fut = extend_future(self.future_all[self.offset:],
                                self.l_out, self.future_all.shape[1])
            row = _lag_features(self.target_win, self.past_win, fut, self.static)
            self.block = self.apply_fn(row, self.target_win)
            self.block_pos = 0
        return self.block[self.block_pos].copy()

    def advance(self, observed: np.ndarray) -> None:
        self.target_win = np.vstack([self.target_win[1:],
                                     np.atleast_1d(observed)])
        if self.past_win.shape[1]:
            # Past covariates are unknown past the cutoff: hold last value.
            self.past_win = np.vstack([self.past_win[1:], self.past_win[-1:]])
        self.offset += 1
        self.block_pos += 1


def _group_tails(g: GroupSeries, l_in: int, use_past: bool, use_static: bool):
    past = g.past_cov if use_past else np.zeros((g.length, 0))
    static = g.static_cov if use_static else np.zeros(0)
    return g.target[-l_in:].copy(), past[-l_in:].copy(), static.copy()


def _as_future(future_cov, n_future: int) -> np.ndarray:
    """Full provided future matrix; blocks extend from it as they chain."""
    if future_cov is None or n_future == 0:
        return np.zeros((0, n_future))
    return np.asarray(future_cov, dtype=float).reshape(-1, n_future)


class LinearLaggedModel(FittedModel):
    KIND = "linear_lagged"

    def __init__(self, spec, group_keys, component_names, weights, l_in, l_out,
                 n_future, tails, sigma):
        super().__init__(spec, group_keys, component_names)
        self.weights = weights  # [n_features+1, l_out*C]
        self.l_in = l_in
        self.l_out = l_out
        self.n_future = n_future
        self.tails = tails  # group -> (target_win, past_win, static)
        self.sigma = sigma  # [C]

    def _apply(self, row: np.ndarray, _win: np.ndarray) -> np.ndarray:
        out = np.append(row, 1.0) @ self.weights
        return out.reshape(self.l_out, len(self.component_names))

    def predictor(self, group_key, future_cov=None) -> WindowPredictor:
        target_win, past_win, static = self.tails[group_key]
        fut = _as_future(future_cov, self.n_future)
        return WindowPredictor(self._apply, target_win, past_win, fut, static,
                               self.l_out)

    def residual_sigma(self, group_key) -> np.ndarray:
        return self.sigma

    def payload(self) -> dict:
        return {
            "weights": matrix_to_json(self.weights),
            "l_in": self.l_in, "l_out": self.l_out, "n_future": self.n_future,
            "group_keys": self.group_keys,
            "component_names": self.component_names,
            "sigma": matrix_to_json(self.sigma),
            "tails": {g: {"target": matrix_to_json(t), "past": matrix_to_json(p),
                          "static": matrix_to_json(s)}
                      for g, (t, p, s) in self.tails.items()},
        }

    @classmethod
    def from_payload(cls, spec, payload) -> "LinearLaggedModel":
        tails = {
            g: (matrix_from_json(v["target"]), matrix_from_json(v["past"]),
                matrix_from_json(v["static"]))
            for g, v in payload["tails"].items()
        }
        return cls(spec, payload["group_keys"], payload["component_names"],
                   matrix_from_json(payload["weights"]), payload["l_in"],
                   payload["l_out"], payload["n_future"], tails,
                   matrix_from_json(payload["sigma"]))


def fit_linear_lagged(bundle: SeriesBundle, spec: ModelSpec, seed: int = 0,
                      plan: FitPlan | None = None) -> LinearLaggedModel:
    l_in = int(spec.params.get("input_chunk", 1))
    l_out = int(spec.params.get("output_chunk", 1))
    lam = float(spec.params.get("ridge_lambda", 1e-3))
    use_past = plan.use_past if plan else bool(bundle.past_cov_names)
    use_future = plan.use_future if plan else bool(bundle.future_cov_names)
    use_static = plan.use_static if plan else bool(bundle.static_cov_names)

    x, y = window_design(bundle, l_in, l_out, use_past, use_future, use_static)
    weights = ridge_solve(x, y, lam)
    resid = np.append(x, np.ones((len(x), 1)), axis=1) @ weights - y
    c = len(bundle.component_names)
    sigma = resid.reshape(-1, l_out, c).std(axis=(0, 1))

    tails = {g.group_key: _group_tails(g, l_in, use_past, use_static)
             for g in bundle.groups}
    n_future = len(bundle.future_cov_names) if use_future else 0
    return LinearLaggedModel(spec, bundle.group_keys, bundle.component_names,
                             weights, l_in, l_out, n_future, tails, sigma)


class NLinearModel(FittedModel):
    KIND = "nlinear"

    def __init__(self, spec, group_keys, component_names, maps, l_in, l_out,
                 tails, sigma):
        super().__init__(spec, group_keys, component_names)
        self.maps = maps  # per component: [l_in+1, l_out] (bias row last)
        self.l_in = l_in
        self.l_out = l_out
        self.tails = tails  # group -> target_win
        self.sigma = sigma

    def _apply(self, _row: np.ndarray, win: np.ndarray) -> np.ndarray:
        out = np.empty((self.l_out, len(self.component_names)))
        for ci, w in enumerate(self.maps):
            anchor = win[-1, ci]
            z = win[:, ci] - anchor
            out[:, ci] = np.append(z, 1.0) @ w + anchor
        return out

    def predictor(self, group_key, future_cov=None) -> WindowPredictor:
        win = self.tails[group_key]
        return WindowPredictor(self._apply, win, np.zeros((self.l_in, 0)),
                               np.zeros((0, 0)), np.zeros(0), self.l_out)

    def residual_sigma(self, group_key) -> np.ndarray:
        return self.sigma

    def payload(self) -> dict:
        return {
            "maps": [matrix_to_json(m) for m in self.maps],
            "l_in": self.l_in, "l_out": self.l_out,
            "group_keys": self.group_keys,
            "component_names": self.component_names,
            "sigma": matrix_to_json(self.sigma),
            "tails": {g: matrix_to_json(t) for g, t in self.tails.items()},
        }

    @classmethod
    def from_payload(cls, spec, payload) -> "NLinearModel":
        return cls(spec, payload["group_keys"], payload["component_names"],
                   [matrix_from_json(m) for m in payload["maps"]],
                   payload["l_in"], payload["l_out"],
                   {g: matrix_from_json(t) for g, t in payload["tails"].items()},
                   matrix_from_json(payload["sigma"]))


def fit_nlinear(bundle: SeriesBundle, spec: ModelSpec, seed: int = 0,
                plan: FitPlan | None = None) -> NLinearModel:
    l_in = int(spec.params.get("input_chunk", 1))
    l_out = int(spec.params.get("output_chunk", 1))
    lam = float(spec.params.get("ridge_lambda", 1e-3))

    c = len(bundle.component_names)
    maps = []
    sigma = np.zeros(c)
    for ci in range(c):
        xs, ys = [], []
        for g in bundle.groups:
            series = g.target[:, ci]
            for origin in range(l_in, g.length - l_out + 1):
                anchor = series[origin - 1]
                xs.append(series[origin - l_in:origin] - anchor)
                ys.append(series[origin:origin + l_out] - anchor)
        if not xs:
            raise TooFewWindows(
                f"no training windows: need group length >= {l_in + l_out}")
        x = np.vstack(xs)
        y = np.vstack(ys)
        w = ridge_solve(x, y, lam)
        maps.append(w)
        resid = np.append(x, np.ones((len(x), 1)), axis=1) @ w - y
        sigma[ci] = resid.std()

    tails = {g.group_key: g.target[-l_in:].copy() for g in bundle.groups}
    return NLinearModel(spec, bundle.group_keys, bundle.component_names,
                        maps, l_in, l_out, tails, sigma)
