"""Shared builders for model and pipeline tests."""

from __future__ import annotations

import numpy as np

from forecaster.series import GroupSeries, SeriesBundle
from forecaster.timebase import Frequency, TimeAxis


def make_bundle(targets: dict[str, np.ndarray],
                past: dict[str, np.ndarray] | None = None,
                future: dict[str, np.ndarray] | None = None,
                static: dict[str, np.ndarray] | None = None,
                component_names: list[str] | None = None,
                past_names: list[str] | None = None,
                future_names: list[str] | None = None,
                static_names: list[str] | None = None) -> SeriesBundle:
    groups = []
    for key in sorted(targets):
        tgt = np.atleast_2d(np.asarray(targets[key], dtype=float))
        if tgt.shape[0] == 1 and tgt.shape[1] > 1:
            tgt = tgt.T
        t = tgt.shape[0]
        pc = np.asarray(past[key], dtype=float) if past else np.zeros((t, 0))
        fc = np.asarray(future[key], dtype=float) if future else np.zeros((t, 0))
        sc = np.asarray(static[key], dtype=float) if static else np.zeros(0)
        groups.append(GroupSeries(
            group_key=key,
            times=np.arange(t),
            target=tgt,
            past_cov=pc,
            future_cov=fc,
            future_times=np.arange(fc.shape[0]),
            static_cov=sc,
        ))
    c = groups[0].target.shape[1]
    return SeriesBundle(
        groups=groups,
        component_names=component_names or [f"y{i}" for i in range(c)],
        past_cov_names=past_names or (
            [f"p{i}" for i in range(groups[0].past_cov.shape[1])]),
        future_cov_names=future_names or (
            [f"f{i}" for i in range(groups[0].future_cov.shape[1])]),
        static_cov_names=static_names or (
            [f"s{i}" for i in range(groups[0].static_cov.shape[0])]),
        freq=Frequency(step=1.0, label="integer", regularity=1.0,
                       is_datetime=False),
        axis=TimeAxis(kind="numeric", origin=0.0, step=1.0),
    )


def single(series, **kw) -> SeriesBundle:
    return make_bundle({"__all__": np.asarray(series, dtype=float)}, **kw)


def ar1_series(phi: float, n: int, seed: int, sigma: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    y = np.zeros(n)
    for t in range(1, n):
        y[t] = phi * y[t - 1] + rng.normal(0, sigma)
    return y
