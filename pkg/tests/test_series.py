"""Bundle building, scaling, splits, and the expanding-window schedule."""

import numpy as np
import pytest

import oracles
from forecaster import ingest
from forecaster.errors import (
    BadStride,
    DuplicateTimestamps,
    ExcessiveGaps,
    InitialTooLong,
    NonConstantStatic,
    UnknownName,
)
from forecaster import errors as errmod
from forecaster.series import (
    GROUP_ALL,
    ScalerParams,
    apply_scaler,
    build_bundle,
    expanding_schedule,
    fill_gaps,
    fit_scaler,
    fit_scaler_per_group,
    holdout_split,
    slice_bundle,
    stitch_forecasts,
)


def make_csv(rows, header):
    lines = [",".join(header)]
    lines += [",".join(str(c) for c in row) for row in rows]
    return ("\n".join(lines) + "\n").encode()


def bike_like(n=30, start="2020-01-01"):
    import datetime as dt
    d0 = dt.date.fromisoformat(start)
    rows = []
    for i in range(n):
        rows.append([(d0 + dt.timedelta(days=i)).isoformat(),
                     100 + i, 15.0 + (i % 7), 0.1 * (i % 3)])
    return make_csv(rows, ["date", "rides", "temp", "precip"])


def parse_and_record(raw):
    parsed = ingest.parse_csv(raw)
    columns = [c.to_json() for c in ingest.extract_columns(parsed)]
    record = {"dataset_id": "ds-test", "columns": columns, "roles": None}
    return record, parsed


BIKE_ROLES = {"date": "time", "rides": "target",
              "temp": "past_covariate", "precip": "past_covariate"}


class TestBuildBundle:
    def test_single_group_shapes(self):
        record, parsed = parse_and_record(bike_like())
        bundle = build_bundle(record, parsed, BIKE_ROLES)
        assert bundle.group_keys == [GROUP_ALL]
        g = bundle.groups[0]
        assert g.target.shape == (30, 1)
        assert g.past_cov.shape == (30, 2)
        assert bundle.component_names == ["rides"]
        assert bundle.past_cov_names == ["temp", "precip"]
        assert bundle.freq.label == "daily"

    def test_grouped_split_and_static(self):
        rows = []
        for fam, base in (("a", 10), ("b", 100)):
            for i in range(12):
                rows.append([i, fam, base + i, 1 if i % 2 else 0, base])
        raw = make_csv(rows, ["t", "family", "sales", "promo", "size"])
        record, parsed = parse_and_record(raw)
        roles = {"t": "time", "family": "grouping", "sales": "target",
                 "promo": "future_covariate", "size": "static_covariate"}
        bundle = build_bundle(record, parsed, roles)
        assert bundle.group_keys == ["a", "b"]
        assert bundle.static_cov_names == ["size"]
        assert bundle.groups[0].static_cov[0] == 10
        assert bundle.groups[1].future_cov.shape == (12, 1)

    def test_row_order_invariance(self):
        record, parsed = parse_and_record(bike_like())
        shuffled = ingest.ParsedCsv(parsed.header, list(reversed(parsed.rows)))
        a = build_bundle(record, parsed, BIKE_ROLES)
        b = build_bundle(record, shuffled, BIKE_ROLES)
        np.testing.assert_array_equal(a.groups[0].target, b.groups[0].target)
        np.testing.assert_array_equal(a.groups[0].times, b.groups[0].times)

    def test_small_gap_interpolated(self):
        rows = [[i, float(i)] for i in range(21) if i != 3]
        raw = make_csv(rows, ["t", "y"])
        record, parsed = parse_and_record(raw)
        bundle = build_bundle(record, parsed, {"t": "time", "y": "target"})
        np.testing.assert_allclose(bundle.groups[0].target[:, 0], np.arange(21.0))

    def test_future_covariate_extension(self):
        rows = [[i, 10 + i, i * 2] for i in range(10)]
        rows += [[10, "", 20], [11, "", 22]]
        raw = make_csv(rows, ["t", "y", "plan"])
        record, parsed = parse_and_record(raw)
        bundle = build_bundle(record, parsed,
                              {"t": "time", "y": "target", "plan": "future_covariate"})
        g = bundle.groups[0]
        assert g.target.shape == (10, 1)
        assert g.future_cov.shape == (12, 1)
        np.testing.assert_allclose(g.future_cov[:, 0], [2 * i for i in range(12)])

    def test_non_constant_static(self):
        rows = [[0, "g", 1, 5], [1, "g", 2, 6]]
        raw = make_csv(rows, ["t", "grp", "y", "s"])
        record, parsed = parse_and_record(raw)
        roles = {"t": "time", "grp": "grouping", "y": "target",
                 "s": "static_covariate"}
        with pytest.raises(NonConstantStatic):
            build_bundle(record, parsed, roles)

    def test_duplicate_times_rejected(self):
        raw = make_csv([[0, 1], [0, 2], [1, 3]], ["t", "y"])
        record, parsed = parse_and_record(raw)
        with pytest.raises(DuplicateTimestamps):
            build_bundle(record, parsed, {"t": "time", "y": "target"})


class TestFillGaps:
    def test_long_run_rejected(self):
        v = np.full(100, 1.0)
        v[10:17] = np.nan
        with pytest.raises(ExcessiveGaps):
            fill_gaps(v)

    def test_total_fraction_rejected(self):
        v = np.full(20, 1.0)
        v[2] = v[5] = v[9] = np.nan
        with pytest.raises(ExcessiveGaps):
            fill_gaps(v)

    def test_edge_extrapolation_linear_trend(self):
        v = np.arange(30.0)
        v[0] = np.nan
        v[-1] = np.nan
        np.testing.assert_allclose(fill_gaps(v), np.arange(30.0))


class TestScaler:
    def test_definitional_examples(self):
        p = ScalerParams()
        p.add("y", np.array([0.0, 5.0, 10.0]))
        np.testing.assert_allclose(p.apply([0, 5, 10], "y"), [0, 0.5, 1])
        np.testing.assert_allclose(p.invert([0, 0.5, 1], "y"), [0, 5, 10])

    def test_degenerate_constant(self):
        p = ScalerParams()
        p.add("y", np.array([7.0, 7.0, 7.0]))
        assert p.stats("y") == (7.0, 7.0, True)
        np.testing.assert_allclose(p.apply([7, 7, 7], "y"), [0, 0, 0])
        np.testing.assert_allclose(p.invert([0, 0, 0], "y"), [7, 7, 7])

    def test_unknown_name(self):
        with pytest.raises(UnknownName):
            ScalerParams().apply([1.0], "nope")

    def test_round_trip_property(self):
        rng = np.random.default_rng(21)
        p = ScalerParams()
        for i in range(200):
            x = rng.normal(rng.uniform(-100, 100), rng.uniform(0.001, 50),
                           int(rng.integers(2, 50)))
            if i % 10 == 0:
                x = np.full(int(rng.integers(1, 20)), rng.uniform(-5, 5))
            p.add("x", x)
            back = p.invert(p.apply(x, "x"), "x")
            np.testing.assert_allclose(back, x, atol=1e-12, rtol=1e-12)

    def test_local_vs_global_scope(self):
        record, parsed = parse_and_record(make_csv(
            [[i, "a", i] for i in range(5)] + [[i, "b", 10 * i] for i in range(5)],
            ["t", "g", "y"]))
        bundle = build_bundle(record, parsed,
                              {"t": "time", "g": "grouping", "y": "target"})
        scaled_global = apply_scaler(bundle, fit_scaler(bundle))
        scaled_local = apply_scaler(bundle, fit_scaler_per_group(bundle))
        # Global scope: group a tops out at 4/40; local: both reach 1.
        assert scaled_global.groups[0].target.max() == pytest.approx(4 / 40)
        assert scaled_local.groups[0].target.max() == pytest.approx(1.0)
        assert scaled_local.groups[1].target.max() == pytest.approx(1.0)


class TestSplits:
    def make_bundle(self, n=100):
        record, parsed = parse_and_record(bike_like(n))
        return build_bundle(record, parsed, BIKE_ROLES)

    def test_holdout_contiguous(self):
        bundle = self.make_bundle(100)
        train, test = holdout_split(bundle, 20)
        assert train.groups[0].length == 80
        assert test.groups[0].length == 20
        assert train.groups[0].times[-1] + 1 == test.groups[0].times[0]

    def test_holdout_preserves_length_and_order(self):
        bundle = self.make_bundle(50)
        for test_len in (1, 10, 49):
            train, test = holdout_split(bundle, test_len)
            assert train.groups[0].length + test.groups[0].length == 50
            assert train.groups[0].times[-1] < test.groups[0].times[0]

    def test_holdout_bounds(self):
        bundle = self.make_bundle(30)
        with pytest.raises(errmod.TestTooLong):
            holdout_split(bundle, 0)
        with pytest.raises(errmod.TestTooLong):
            holdout_split(bundle, 30)

    def test_slice_keeps_future(self):
        bundle = self.make_bundle(30)
        sliced = slice_bundle(bundle, 0, 10)
        assert sliced.groups[0].length == 10


class TestExpandingSchedule:
    def test_spec_enumeration(self):
        s = expanding_schedule(130, 100, 10, 10)
        assert s.windows == [(100, 100, 110), (110, 110, 120), (120, 120, 130)]

    def test_clipped_single_window(self):
        s = expanding_schedule(105, 100, 10, 10)
        assert s.windows == [(100, 100, 105)]

    def test_boundaries(self):
        with pytest.raises(InitialTooLong):
            expanding_schedule(100, 100, 10, 10)
        with pytest.raises(InitialTooLong):
            expanding_schedule(100, 0, 10, 10)
        with pytest.raises(BadStride):
            expanding_schedule(100, 50, 0, 10)
        with pytest.raises(BadStride):
            expanding_schedule(100, 50, 11, 10)  # stride > horizon leaves gaps

    def test_random_tuples_tile_range(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            t = int(rng.integers(5, 300))
            initial = int(rng.integers(1, t))
            horizon = int(rng.integers(1, 40))
            stride = int(rng.integers(1, horizon + 1))
            s = expanding_schedule(t, initial, stride, horizon)
            assert s.windows == oracles.enumerate_expanding_windows(
                t, initial, stride, horizon)
            covered = sorted(oracles.earliest_forecast_indices(s.windows))
            assert covered == list(range(initial, t))
            assert all(b[0] - a[0] == stride
                       for a, b in zip(s.windows, s.windows[1:]))
            assert s.windows[-1][2] == t
            if stride == horizon:
                spans = [(a, b) for _, a, b in s.windows]
                assert all(x[1] == y[0] for x, y in zip(spans, spans[1:]))

    def test_stitch_keeps_earliest(self):
        s = expanding_schedule(20, 10, 2, 4)
        preds = [np.full((end - start, 1), float(i))
                 for i, (_, start, end) in enumerate(s.windows)]
        out = stitch_forecasts(s, preds)
        assert out.shape == (10, 1)
        want = oracles.earliest_forecast_indices(s.windows)
        for step, wi in want.items():
            assert out[step - 10, 0] == wi
