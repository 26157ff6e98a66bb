"""Forecast accuracy metrics with explicit undefined markers.

Six metrics (MAE, MAPE, MSE, RMSE, SMAPE, MASE), each computable in
normalized (scaled) and de-normalized (original-unit) space.  Percentage
metrics go undefined when actuals contain zeros; MASE goes undefined when
the training series is no longer than the seasonal period or the seasonal
naive denominator vanishes.  Undefined is a first-class state, never
conflated with 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, LengthMismatch

METRIC_KINDS = ("mae", "mape", "mse", "rmse", "smape", "mase")

ZEROS_IN_ACTUALS = "zeros_in_actuals"
SEASONAL_LENGTH_MISMATCH = "seasonal_length_mismatch"


@dataclass(frozen=True)
class MetricValue:
    value: float | None
    undefined_reason: str | None = None

    def __post_init__(self):
        if (self.value is None) == (self.undefined_reason is None):
            raise ValueError("exactly one of value / undefined_reason must be set")

    @property
    def defined(self) -> bool:
        return self.value is not None

    def to_json(self) -> dict:
        if self.defined:
            return {"value": self.value}
        return {"value": None, "reason": self.undefined_reason}

    @classmethod
    def from_json(cls, obj: dict) -> "MetricValue":
        if obj.get("value") is None:
            return cls(None, obj.get("reason"))
        return cls(float(obj["value"]))


def compute_metric(kind: str, pred, actual, train=None, k: int = 1) -> MetricValue:
    """Compute one metric over aligned prediction/actual vectors.

    ``train`` and ``k`` (seasonality) are consulted only for MASE.
    """
    p = np.asarray(pred, dtype=float)
    a = np.asarray(actual, dtype=float)
    if p.shape != a.shape:
        raise LengthMismatch(f"pred length {p.size} != actual length {a.size}")
    if p.size == 0:
        raise EmptyInput("empty prediction vector")

    err = p - a
    if kind == "mae":
        return MetricValue(float(np.mean(np.abs(err))))
    if kind == "mse":
        return MetricValue(float(np.mean(err ** 2)))
    if kind == "rmse":
        return MetricValue(float(np.sqrt(np.mean(err ** 2))))
    if kind == "mape":
        if np.any(a == 0.0):
            return MetricValue(None, ZEROS_IN_ACTUALS)
        return MetricValue(float(100.0 * np.mean(np.abs(err) / np.abs(a))))
    if kind == "smape":
        denom = np.abs(p) + np.abs(a)
        if np.any(denom == 0.0):
            return MetricValue(None, ZEROS_IN_ACTUALS)
        return MetricValue(float(100.0 * np.mean(2.0 * np.abs(err) / denom)))
    if kind == "mase":
        if train is None:
            raise EmptyInput("MASE requires the training series")
        t = np.asarray(train, dtype=float)
        if t.size <= k:
            return MetricValue(None, SEASONAL_LENGTH_MISMATCH)
        scale = float(np.mean(np.abs(t[k:] - t[:-k])))
        if scale == 0.0:
            return MetricValue(None, SEASONAL_LENGTH_MISMATCH)
        return MetricValue(float(np.mean(np.abs(err)) / scale))
    raise ValueError(f"unknown metric kind {kind!r}")


def compute_cell(pred, actual, train, k: int) -> dict[str, MetricValue]:
    """All six metrics for one (group, component) cell."""
    return {m: compute_metric(m, pred, actual, train, k) for m in METRIC_KINDS}


def aggregate_cells(cells: list[dict[str, MetricValue]]) -> dict[str, MetricValue]:
    """Arithmetic mean per metric over defined cells.

    Undefined cells are skipped; if every cell is undefined the aggregate is
    undefined, carrying the first cell's reason.
    """
    out: dict[str, MetricValue] = {}
    for m in METRIC_KINDS:
        defined = [c[m].value for c in cells if c[m].defined]
        if defined:
            out[m] = MetricValue(float(np.mean(defined)))
        else:
            out[m] = MetricValue(None, cells[0][m].undefined_reason if cells else
                                 SEASONAL_LENGTH_MISMATCH)
    return out


@dataclass
class MetricsReport:
    """Per-(group, component) cells plus aggregates, in both scales."""

    # per scale -> group -> component -> metric -> MetricValue
    cells: dict[str, dict[str, dict[str, dict[str, MetricValue]]]]
    # per scale -> metric -> MetricValue
    aggregate: dict[str, dict[str, MetricValue]]

    def to_json(self) -> dict:
        per_group: dict = {}
        for scale, groups in self.cells.items():
            for g, comps in groups.items():
                for c, cell in comps.items():
                    per_group.setdefault(g, {}).setdefault(c, {})[scale] = {
                        m: v.to_json() for m, v in cell.items()
                    }
        return {
            "metrics": {
                scale: {m: v.to_json() for m, v in agg.items()}
                for scale, agg in self.aggregate.items()
            },
            "per_group": per_group,
        }


def build_report(per_cell_scaled: dict, per_cell_raw: dict) -> MetricsReport:
    """Assemble a MetricsReport from precomputed cells.

    ``per_cell_*`` map group -> component -> {metric: MetricValue}.
    """
    cells = {"normalized": per_cell_scaled, "denormalized": per_cell_raw}
    aggregate = {}
    for scale, groups in cells.items():
        flat = [cell for comps in groups.values() for cell in comps.values()]
        aggregate[scale] = aggregate_cells(flat)
    return MetricsReport(cells=cells, aggregate=aggregate)
