"""Role-classified, time-aligned numeric bundles plus scaling and splits.

A SeriesBundle is the unit of training and evaluation: one GroupSeries per
grouping value (or a single "__all__" group), all sharing component and
covariate names.  Times are integer offsets on the inferred frequency grid;
small gaps are filled linearly, long gaps are an error.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import timebase
from .errors import (
    BadStride,
    DuplicateTimestamps,
    EmptyGroup,
    ExcessiveGaps,
    InitialTooLong,
    NonConstantStatic,
    TestTooLong,
    TypeMismatch,
    UnknownName,
)
from .ingest import ParsedCsv, _column_kinds
from .timebase import Frequency, TimeAxis

GROUP_ALL = "__all__"
MAX_GAP_RUN = 5
MAX_MISSING_FRACTION = 0.10


@dataclass
class GroupSeries:
    group_key: str
    times: np.ndarray        # [T] integer grid offsets, contiguous
    target: np.ndarray       # [T, C]
    past_cov: np.ndarray     # [T, P]
    future_cov: np.ndarray   # [T2, F] with T2 >= T, same start offset
    future_times: np.ndarray  # [T2]
    static_cov: np.ndarray   # [S]

    @property
    def length(self) -> int:
        return self.target.shape[0]


@dataclass
class SeriesBundle:
    groups: list[GroupSeries]
    component_names: list[str]
    past_cov_names: list[str]
    future_cov_names: list[str]
    static_cov_names: list[str]
    freq: Frequency
    axis: TimeAxis

    def group(self, key: str) -> GroupSeries:
        for g in self.groups:
            if g.group_key == key:
                return g
        raise UnknownName(f"no group {key!r}")

    @property
    def group_keys(self) -> list[str]:
        return [g.group_key for g in self.groups]

    @property
    def min_length(self) -> int:
        return min(g.length for g in self.groups)


def fill_gaps(values: np.ndarray, max_run: int = MAX_GAP_RUN,
              label: str = "series") -> np.ndarray:
    """Linearly fill NaN runs of at most ``max_run``; longer runs are an error.

    Interior runs interpolate between neighbors; edge runs extrapolate the
    linear trend of the two nearest observed points.
    """
    v = np.asarray(values, dtype=float).copy()
    isnan = np.isnan(v)
    if not isnan.any():
        return v
    if isnan.all():
        raise ExcessiveGaps(f"{label}: no observed values")
    if isnan.sum() / v.size > MAX_MISSING_FRACTION:
        raise ExcessiveGaps(
            f"{label}: {isnan.sum()}/{v.size} values missing exceeds "
            f"{MAX_MISSING_FRACTION:.0%}")
    idx = np.flatnonzero(~isnan)
    run_start = None
    for i in range(v.size + 1):
        missing = i < v.size and isnan[i]
        if missing and run_start is None:
            run_start = i
        elif not missing and run_start is not None:
            if i - run_start > max_run:
                raise ExcessiveGaps(
                    f"{label}: gap of {i - run_start} consecutive points at {run_start}")
            run_start = None
    if idx.size == 1:
        v[isnan] = v[idx[0]]
        return v
    # np.interp holds edges flat; extend edge runs along the nearest trend.
    v[isnan] = np.interp(np.flatnonzero(isnan), idx, v[idx])
    first, last = idx[0], idx[-1]
    if first > 0:
        slope = (v[idx[1]] - v[first]) / (idx[1] - first)
        for i in range(first):
            v[i] = v[first] - (first - i) * slope
    if last < v.size - 1:
        slope = (v[last] - v[idx[-2]]) / (last - idx[-2])
        for i in range(last + 1, v.size):
            v[i] = v[last] + (i - last) * slope
    return v


def _parse_numeric_column(raw: list[str], rows: list[int]) -> np.ndarray:
    out = np.full(len(rows), np.nan)
    for j, i in enumerate(rows):
        num = timebase.parse_number(raw[i])
        if num is not None:
            out[j] = num
    return out


def build_bundle(record: dict, parsed: ParsedCsv, roles: dict[str, str]) -> SeriesBundle:
    """Assemble a SeriesBundle from a parsed dataset and validated roles.

    Rows are sorted by time within each group and reindexed to the inferred
    frequency grid.  Trailing rows with empty targets but future-covariate
    values become the future-covariate extension.
    """
    kinds = _column_kinds(record)
    by_role: dict[str, list[str]] = {}
    for name, role in roles.items():
        by_role.setdefault(role, []).append(name)
    # Preserve dataset column order within each role.
    for role, names in by_role.items():
        by_role[role] = [n for n in parsed.header if n in names]

    time_col = by_role["time"][0]
    target_cols = by_role["target"]
    past_cols = by_role.get("past_covariate", [])
    future_cols = by_role.get("future_covariate", [])
    static_cols = by_role.get("static_covariate", [])
    group_col = by_role.get("grouping", [None])[0]

    times_raw = []
    for v in parsed.column(time_col):
        if not v.strip():
            times_raw.append(None)
            continue
        t = (timebase.parse_timestamp(v) if kinds[time_col] == "datetime"
             else timebase.parse_number(v))
        if t is None:
            raise TypeMismatch(f"unparseable time value {v!r}", field=time_col)
        times_raw.append(t)

    group_values = parsed.column(group_col) if group_col else None
    all_group_keys = (sorted(set(group_values)) if group_values is not None
                      else [GROUP_ALL])
    row_indices: dict[str, list[int]] = {k: [] for k in all_group_keys}
    for i, t in enumerate(times_raw):
        if t is None:
            continue
        key = group_values[i] if group_values is not None else GROUP_ALL
        row_indices[key].append(i)

    for key, rows in row_indices.items():
        if not rows:
            raise EmptyGroup(f"group {key!r} has no usable rows")

    all_times = sorted({times_raw[i] for rows in row_indices.values() for i in rows})
    freq = timebase.infer_frequency(all_times)
    axis = TimeAxis.build(all_times[0], freq)

    # Static categories are collected across all groups so one-hot columns align.
    static_kinds = {c: kinds[c] for c in static_cols}
    static_categories: dict[str, list[str]] = {}
    for c in static_cols:
        if static_kinds[c] == "categorical":
            static_categories[c] = sorted(
                {v for v in parsed.column(c) if v.strip()})
    static_names: list[str] = []
    for c in static_cols:
        if static_kinds[c] == "categorical":
            static_names.extend(f"{c}={cat}" for cat in static_categories[c])
        else:
            static_names.append(c)

    groups: list[GroupSeries] = []
    for key in all_group_keys:
        rows = row_indices[key]
        offsets = []
        for i in rows:
            pos = axis.offset_of(times_raw[i])
            snapped = int(round(pos))
            offsets.append(snapped)
        order = np.argsort(np.array(offsets), kind="stable")
        rows = [rows[j] for j in order]
        offsets = [offsets[j] for j in order]
        if len(set(offsets)) != len(offsets):
            raise DuplicateTimestamps(f"group {key!r} has duplicate grid timestamps")

        start, end = offsets[0], offsets[-1]
        grid_len = end - start + 1
        pos_of = {o: j for j, o in enumerate(offsets)}

        def grid_column(col: str) -> np.ndarray:
            raw = parsed.column(col)
            g = np.full(grid_len, np.nan)
            for o, j in pos_of.items():
                num = timebase.parse_number(raw[rows[j]])
                if num is not None:
                    g[o - start] = num
            return g

        target_grid = np.column_stack([grid_column(c) for c in target_cols])
        # Trailing all-NaN target rows with future-covariate data are the
        # future extension, not gaps.
        t_len = grid_len
        while t_len > 0 and np.isnan(target_grid[t_len - 1]).all():
            t_len -= 1
        if t_len == 0:
            raise EmptyGroup(f"group {key!r} has no target observations")

        target = np.column_stack([
            fill_gaps(target_grid[:t_len, j], label=f"{key}/{target_cols[j]}")
            for j in range(len(target_cols))])
        if past_cols:
            past = np.column_stack([
                fill_gaps(grid_column(c)[:t_len], label=f"{key}/{c}") for c in past_cols])
        else:
            past = np.zeros((t_len, 0))
        if future_cols:
            f_grid = [grid_column(c) for c in future_cols]
            f_len = grid_len
            while f_len > t_len and all(np.isnan(g[f_len - 1]) for g in f_grid):
                f_len -= 1
            future = np.column_stack([
                fill_gaps(g[:f_len], label=f"{key}/future") for g in f_grid])
        else:
            f_len = t_len
            future = np.zeros((t_len, 0))

        statics = []
        for c in static_cols:
            raw = parsed.column(c)
            vals = [raw[i].strip() for i in rows if raw[i].strip()]
            distinct = sorted(set(vals))
            if len(distinct) > 1:
                raise NonConstantStatic(
                    f"static covariate {c!r} varies within group {key!r}: {distinct}",
                    field=c)
            if not distinct:
                raise TypeMismatch(f"static covariate {c!r} empty in group {key!r}",
                                   field=c)
            value = distinct[0]
            if static_kinds[c] == "categorical":
                statics.extend(1.0 if value == cat else 0.0
                               for cat in static_categories[c])
            else:
                num = timebase.parse_number(value)
                if num is None:
                    raise TypeMismatch(f"static covariate {c!r} not numeric", field=c)
                statics.append(num)

        groups.append(GroupSeries(
            group_key=key,
            times=np.arange(start, start + t_len),
            target=target,
            past_cov=past,
            future_cov=future,
            future_times=np.arange(start, start + f_len),
            static_cov=np.array(statics, dtype=float),
        ))

    return SeriesBundle(
        groups=groups,
        component_names=list(target_cols),
        past_cov_names=list(past_cols),
        future_cov_names=list(future_cols),
        static_cov_names=static_names,
        freq=freq,
        axis=axis,
    )


# --- scaling ----------------------------------------------------------------

@dataclass
class ScalerParams:
    """Per-name min/max scaling stats; degenerate means max == min."""

    params: dict[str, tuple[float, float, bool]] = field(default_factory=dict)

    def add(self, name: str, values: np.ndarray) -> None:
        lo = float(np.min(values))
        hi = float(np.max(values))
        self.params[name] = (lo, hi, hi == lo)

    def stats(self, name: str) -> tuple[float, float, bool]:
        if name not in self.params:
            raise UnknownName(f"no scaler stats for {name!r}")
        return self.params[name]

    def apply(self, values: np.ndarray, name: str) -> np.ndarray:
        lo, hi, degenerate = self.stats(name)
        v = np.asarray(values, dtype=float)
        if degenerate:
            return np.zeros_like(v)
        return (v - lo) / (hi - lo)

    def invert(self, values: np.ndarray, name: str) -> np.ndarray:
        lo, hi, degenerate = self.stats(name)
        v = np.asarray(values, dtype=float)
        if degenerate:
            return np.full_like(v, lo)
        return v * (hi - lo) + lo

    def to_json(self) -> dict:
        return {name: {"min": lo, "max": hi, "degenerate": deg}
                for name, (lo, hi, deg) in self.params.items()}

    @classmethod
    def from_json(cls, obj: dict) -> "ScalerParams":
        return cls({name: (s["min"], s["max"], bool(s["degenerate"]))
                    for name, s in obj.items()})


def _series_by_name(g: GroupSeries, bundle: SeriesBundle, name: str) -> np.ndarray:
    if name in bundle.component_names:
        return g.target[:, bundle.component_names.index(name)]
    if name in bundle.past_cov_names:
        return g.past_cov[:, bundle.past_cov_names.index(name)]
    if name in bundle.future_cov_names:
        return g.future_cov[:, bundle.future_cov_names.index(name)]
    if name in bundle.static_cov_names:
        return np.array([g.static_cov[bundle.static_cov_names.index(name)]])
    raise UnknownName(name)


def fit_scaler(bundle: SeriesBundle) -> ScalerParams:
    """Global scaler: per name, min/max pooled across all groups."""
    params = ScalerParams()
    names = (bundle.component_names + bundle.past_cov_names
             + bundle.future_cov_names + bundle.static_cov_names)
    for name in names:
        pooled = np.concatenate([
            np.atleast_1d(_series_by_name(g, bundle, name)) for g in bundle.groups])
        params.add(name, pooled)
    return params


def fit_scaler_per_group(bundle: SeriesBundle) -> dict[str, ScalerParams]:
    """Local scaler: min/max per name within each group (for local models)."""
    out = {}
    for g in bundle.groups:
        params = ScalerParams()
        names = (bundle.component_names + bundle.past_cov_names
                 + bundle.future_cov_names + bundle.static_cov_names)
        for name in names:
            params.add(name, np.atleast_1d(_series_by_name(g, bundle, name)))
        out[g.group_key] = params
    return out


def _scale_matrix(matrix: np.ndarray, names: list[str], params: ScalerParams) -> np.ndarray:
    if matrix.shape[1] == 0:
        return matrix.copy()
    return np.column_stack([
        params.apply(matrix[:, j], name) for j, name in enumerate(names)])


def apply_scaler(bundle: SeriesBundle,
                 params: ScalerParams | dict[str, ScalerParams]) -> SeriesBundle:
    """Return a bundle with every named series mapped into [0, 1]."""
    groups = []
    for g in bundle.groups:
        p = params[g.group_key] if isinstance(params, dict) else params
        statics = np.array([
            p.apply(np.array([v]), name)[0]
            for v, name in zip(g.static_cov, bundle.static_cov_names)
        ]) if g.static_cov.size else g.static_cov.copy()
        groups.append(replace(
            g,
            target=_scale_matrix(g.target, bundle.component_names, p),
            past_cov=_scale_matrix(g.past_cov, bundle.past_cov_names, p),
            future_cov=_scale_matrix(g.future_cov, bundle.future_cov_names, p),
            static_cov=statics,
        ))
    return replace(bundle, groups=groups)


# --- splits and schedules ----------------------------------------------------

def slice_group(g: GroupSeries, start: int, stop: int) -> GroupSeries:
    """Rows [start, stop) of targets and past covariates; future stays whole."""
    return replace(
        g,
        times=g.times[start:stop],
        target=g.target[start:stop],
        past_cov=g.past_cov[start:stop],
    )


def slice_bundle(bundle: SeriesBundle, start: int, stop: int | None = None) -> SeriesBundle:
    groups = []
    for g in bundle.groups:
        s = stop if stop is not None else g.length
        groups.append(slice_group(g, start, s))
    return replace(bundle, groups=groups)


def holdout_split(bundle: SeriesBundle, test_len: int) -> tuple[SeriesBundle, SeriesBundle]:
    """Last ``test_len`` rows per group become the test region.

    Future covariates remain fully visible on the train side, so models
    permitted to use them can see test-window values.
    """
    if test_len < 1 or test_len >= bundle.min_length:
        raise TestTooLong(
            f"test_len {test_len} must be in [1, {bundle.min_length - 1}]",
            field="test_len")
    train_groups, test_groups = [], []
    for g in bundle.groups:
        t = g.length
        train_groups.append(slice_group(g, 0, t - test_len))
        test_groups.append(slice_group(g, t - test_len, t))
    return (replace(bundle, groups=train_groups),
            replace(bundle, groups=test_groups))


@dataclass(frozen=True)
class WindowSchedule:
    initial_train_len: int
    stride: int
    horizon: int
    windows: list[tuple[int, int, int]]  # (train_end, forecast_start, forecast_end)


def expanding_schedule(t: int, initial_train_len: int, stride: int,
                       horizon: int) -> WindowSchedule:
    """Expanding-window refit schedule covering [initial_train_len, t).

    Strides larger than the horizon would leave unforecast gaps, so they are
    rejected along with non-positive strides and horizons.
    """
    if not 0 < initial_train_len < t:
        raise InitialTooLong(
            f"initial_train_len {initial_train_len} must be in [1, {t - 1}]",
            field="initial_train_len")
    if stride < 1 or horizon < 1 or stride > horizon:
        raise BadStride(
            f"need 1 <= stride <= horizon, got stride={stride} horizon={horizon}",
            field="stride")
    windows = []
    train_end = initial_train_len
    while True:
        forecast_end = min(train_end + horizon, t)
        windows.append((train_end, train_end, forecast_end))
        if forecast_end >= t:
            break
        train_end += stride
    return WindowSchedule(initial_train_len, stride, horizon, windows)


def stitch_forecasts(schedule: WindowSchedule,
                     window_preds: list[np.ndarray]) -> np.ndarray:
    """Concatenate per-window forecasts, keeping the earliest per timestep.

    ``window_preds[i]`` has one row per timestep of window i's forecast
    region.  Returns rows for [initial_train_len, t).
    """
    t = schedule.windows[-1][2]
    width = window_preds[0].shape[1] if window_preds[0].ndim > 1 else 1
    out = np.full((t - schedule.initial_train_len, width), np.nan)
    for (train_end, fc_start, fc_end), preds in zip(schedule.windows, window_preds):
        preds = np.atleast_2d(np.asarray(preds, dtype=float))
        if preds.shape[0] != fc_end - fc_start:
            preds = preds.reshape(fc_end - fc_start, -1)
        for step, offset in enumerate(range(fc_start, fc_end)):
            row = offset - schedule.initial_train_len
            if np.isnan(out[row]).all():
                out[row] = preds[step]
    return out
