"""Sample assembly, scaling, splits, synthetic market, binary cache."""

from datetime import date

import numpy as np
import pytest

from i2e.dataset import (
    DatasetError,
    DateInterval,
    MinMaxScaler,
    Sample,
    SplitSpec,
    apply_scaler,
    class_weights,
    clip_target,
    fit_scaler,
    flatten_window,
    load_dataset,
    make_windows,
    make_windows_for_symbol,
    save_dataset,
    split_by_date,
    synth_market,
    to_arrays,
    unflatten_window,
)
from i2e.indicators import compute_features, intraday_return
from i2e.market_data import TickerSeries

from conftest import random_walk_bars


def features_and_returns(series):
    feats = compute_features(series)
    rets = [(b.date, intraday_return(b)) for b in series.bars]
    return feats, rets


class TestClipTarget:
    def test_above_threshold(self):
        assert clip_target(2.5) == 2.0

    def test_below_threshold_identity(self):
        assert clip_target(0.03) == 0.03

    def test_no_lower_clip(self):
        assert clip_target(-3.0) == -3.0


class TestMakeWindows:
    def test_boundary_counts(self):
        bars = random_walk_bars(60, seed=20)
        series = TickerSeries("S", tuple(bars))
        feats, rets = features_and_returns(series)
        # Keep exactly 10 feature rows; the 11th bar return exists.
        ten = feats[:10]
        samples = make_windows(ten, rets)
        assert len(samples) == 1
        nine = feats[:9]
        assert make_windows(nine, rets) == []

    def test_window_contents_vs_nested_loop_oracle(self):
        bars = random_walk_bars(120, seed=21)
        series = TickerSeries("S", tuple(bars))
        feats, rets = features_and_returns(series)
        samples = make_windows(feats, rets)
        ret_by_date = dict(rets)
        dates = [d for d, _ in rets]
        # Oracle: explicit loops over every anchor.
        expected = []
        for j in range(len(feats)):
            if j < 9:
                continue
            anchor = feats[j].date
            later = [d for d in dates if d > anchor]
            if not later:
                continue
            window = [feats[j - 9 + k].values() for k in range(10)]
            expected.append((anchor, later[0], window, ret_by_date[later[0]]))
        assert len(samples) == len(expected)
        for s, (anchor, target_day, window, raw) in zip(samples, expected):
            assert s.anchor_date == anchor
            assert s.target_date == target_day
            assert np.array_equal(s.window, np.array(window))
            assert s.target_return == clip_target(raw)
            assert s.target_label == (1 if raw > 0 else 0)

    def test_no_field_uses_future_bars(self):
        # Leakage guard: truncate the raw series at t; all samples anchored
        # <= t-1 must be bitwise unchanged.
        bars = random_walk_bars(150, seed=22)
        full = TickerSeries("S", tuple(bars))
        truncated = TickerSeries("S", tuple(bars[:100]))
        f_full, r_full = features_and_returns(full)
        f_trunc, r_trunc = features_and_returns(truncated)
        s_full = {s.anchor_date: s for s in make_windows(f_full, r_full)}
        for s in make_windows(f_trunc, r_trunc):
            twin = s_full[s.anchor_date]
            assert np.array_equal(s.window, twin.window)
            assert s.target_return == twin.target_return
            assert s.target_label == twin.target_label


class TestScaler:
    def test_hand_values(self):
        mins = np.zeros(16)
        maxes = np.full(16, 2.0)
        scaler = MinMaxScaler(mins, maxes)
        assert scaler.transform_target(1.0) == 0.5
        assert scaler.transform_target(0.0) == 0.0
        assert scaler.transform_target(2.0) == 1.0

    def test_constant_channel_maps_to_zero(self):
        mins = np.zeros(16)
        maxes = np.zeros(16)
        scaler = MinMaxScaler(mins, maxes)
        window = np.zeros((10, 15))
        assert np.all(scaler.transform_window(window) == 0.0)

    def test_round_trip_error_below_1e9(self):
        bars = random_walk_bars(200, seed=23)
        series = TickerSeries("S", tuple(bars))
        feats, rets = features_and_returns(series)
        samples = make_windows(feats, rets)
        scaler = fit_scaler(samples)
        scaled = apply_scaler(scaler, samples)
        for raw, s in zip(samples, scaled):
            back = scaler.inverse_window(s.window)
            assert np.max(np.abs(back - raw.window)) < 1e-9
            assert abs(scaler.inverse_target(s.target_return) - raw.target_return) < 1e-9

    def test_training_rows_map_into_unit_interval(self):
        bars = random_walk_bars(200, seed=24)
        series = TickerSeries("S", tuple(bars))
        feats, rets = features_and_returns(series)
        samples = make_windows(feats, rets)
        scaled = apply_scaler(fit_scaler(samples), samples)
        stacked = np.stack([s.window for s in scaled])
        assert stacked.min() >= -1e-12 and stacked.max() <= 1 + 1e-12

    def test_scaler_isolation_from_validation_data(self):
        bars = random_walk_bars(200, seed=25)
        series = TickerSeries("S", tuple(bars))
        feats, rets = features_and_returns(series)
        samples = make_windows(feats, rets)
        train, rest = samples[:50], samples[50:]
        scaler = fit_scaler(train)
        mins_before = scaler.mins.copy()
        for s in rest:  # mutate non-training data wildly
            s.window *= 1e6
        assert np.array_equal(scaler.mins, mins_before)
        refit = fit_scaler(train)
        assert np.array_equal(refit.mins, mins_before)


class TestSplit:
    def test_membership_by_target_date(self):
        spec = SplitSpec.default()
        win = np.zeros((10, 15))

        def sample_on(target):
            return Sample("S", target, target, win, 0.1, 1)

        train, val, test = split_by_date(
            [sample_on(date(2022, 6, 1)), sample_on(date(2023, 11, 30)), sample_on(date(2009, 12, 31))],
            spec,
        )
        assert [s.target_date for s in val] == [date(2022, 6, 1)]
        assert [s.target_date for s in test] == [date(2023, 11, 30)]
        assert train == []  # 2009 sample excluded entirely

    def test_overlapping_intervals_rejected(self):
        with pytest.raises(DatasetError):
            SplitSpec(
                DateInterval(date(2010, 1, 1), date(2022, 6, 30)),
                DateInterval(date(2022, 1, 1), date(2022, 12, 31)),
                DateInterval(date(2023, 1, 1), date(2023, 12, 1)),
            )

    def test_partitions_disjoint_and_exhaustive(self):
        bars = random_walk_bars(400, seed=26)
        series = TickerSeries("S", tuple(bars))
        feats, rets = features_and_returns(series)
        samples = make_windows(feats, rets)
        dates = sorted({s.target_date for s in samples})
        spec = SplitSpec.from_dates(dates)
        train, val, test = split_by_date(samples, spec)
        assert len(train) + len(val) + len(test) == len(samples)
        ids = lambda part: {(s.anchor_date, s.target_date) for s in part}
        assert not (ids(train) & ids(val)) and not (ids(val) & ids(test)) and not (ids(train) & ids(test))


class TestClassWeights:
    def test_balanced(self):
        labels = [0] * 50 + [1] * 50
        assert class_weights(labels) == (1.0, 1.0)

    def test_75_25_formula_by_hand(self):
        # w_c = N / (2 N_c): 100/(2*75) = 2/3 and 100/(2*25) = 2.
        labels = [0] * 75 + [1] * 25
        w_neg, w_pos = class_weights(labels)
        assert w_neg == pytest.approx(2.0 / 3.0)
        assert w_pos == pytest.approx(2.0)

    def test_weighted_mass_equal_property(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            labels = rng.integers(0, 2, size=rng.integers(10, 500))
            if labels.min() == labels.max():
                continue
            w_neg, w_pos = class_weights(labels)
            n_pos = labels.sum()
            n_neg = len(labels) - n_pos
            assert w_neg * n_neg == pytest.approx(w_pos * n_pos)

    def test_single_class_rejected(self):
        with pytest.raises(DatasetError):
            class_weights([1, 1, 1])


class TestFlatten:
    def test_zero_window(self):
        s = Sample("S", date(2023, 1, 2), date(2023, 1, 3), np.zeros((10, 15)), 0.0, 0)
        assert np.array_equal(flatten_window(s), np.zeros(150))

    def test_ordering_definition(self):
        win = np.zeros((10, 15))
        win[0, 0] = 1.0
        win[9, 14] = 2.0
        win[3, 7] = 3.0
        s = Sample("S", date(2023, 1, 2), date(2023, 1, 3), win, 0.0, 0)
        flat = flatten_window(s)
        assert flat[0] == 1.0
        assert flat[149] == 2.0
        assert flat[3 * 15 + 7] == 3.0

    def test_bijection(self):
        rng = np.random.default_rng(1)
        win = rng.normal(size=(10, 15))
        s = Sample("S", date(2023, 1, 2), date(2023, 1, 3), win, 0.0, 0)
        assert np.array_equal(unflatten_window(flatten_window(s)), win)


class TestSynthMarket:
    def test_determinism(self):
        a_uni, a_idx = synth_market(5, 250, seed=7)
        b_uni, b_idx = synth_market(5, 250, seed=7)
        assert a_idx.bars == b_idx.bars
        for sym in a_uni.symbols():
            assert a_uni.series_by_symbol[sym].bars == b_uni.series_by_symbol[sym].bars

    def test_zero_noise_perfect_correlation(self):
        uni, idx = synth_market(3, 300, seed=3, noise_scale=0.0)
        idx_rets = np.array([intraday_return(b) for b in idx.bars])
        for sym in uni.symbols():
            rets = np.array([intraday_return(b) for b in uni.series_by_symbol[sym].bars])
            corr = np.corrcoef(rets, idx_rets)[0, 1]
            assert corr == pytest.approx(1.0, abs=1e-9)

    def test_correlation_increases_as_noise_drops(self):
        # Median absolute correlation over 5 seeds must be ordered by noise.
        def median_corr(noise):
            values = []
            for seed in range(5):
                uni, idx = synth_market(4, 300, seed=seed, noise_scale=noise)
                idx_rets = np.array([intraday_return(b) for b in idx.bars])
                for sym in uni.symbols():
                    rets = np.array([intraday_return(b) for b in uni.series_by_symbol[sym].bars])
                    values.append(np.corrcoef(rets, idx_rets)[0, 1])
            return float(np.median(values))

        assert median_corr(0.2) > median_corr(1.0) > median_corr(4.0)

    def test_bars_valid_and_aligned(self):
        uni, idx = synth_market(4, 250, seed=9)
        for sym in uni.symbols():
            series = uni.series_by_symbol[sym]
            assert len(series) == 250
            for bar in series.bars:
                assert bar.is_valid()
            assert [b.date for b in series.bars] == [b.date for b in idx.bars]

    def test_parameter_validation(self):
        with pytest.raises(DatasetError):
            synth_market(1, 250, seed=0)
        with pytest.raises(DatasetError):
            synth_market(5, 100, seed=0)


class TestBinaryCache:
    def test_round_trip(self, tmp_path):
        bars = random_walk_bars(120, seed=27)
        series = TickerSeries("CACHE", tuple(bars))
        feats, rets = features_and_returns(series)
        samples = make_windows_for_symbol("CACHE", feats, rets)
        scaler = fit_scaler(samples)
        scaled = apply_scaler(scaler, samples)
        path = tmp_path / "train.i2eds"
        save_dataset(path, scaled, scaler)
        loaded, loaded_scaler = load_dataset(path)
        assert np.array_equal(loaded_scaler.mins, scaler.mins)
        assert np.array_equal(loaded_scaler.maxes, scaler.maxes)
        assert len(loaded) == len(scaled)
        for a, b in zip(loaded, scaled):
            assert a.symbol == b.symbol
            assert a.anchor_date == b.anchor_date
            assert a.target_date == b.target_date
            assert a.target_label == b.target_label
            # float32 storage: round-trip exact at float32 resolution
            assert np.array_equal(a.window.astype(np.float32), b.window.astype(np.float32))
            assert np.float32(a.target_return) == np.float32(b.target_return)

    def test_magic_checked(self, tmp_path):
        p = tmp_path / "bad.i2eds"
        p.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
        with pytest.raises(DatasetError):
            load_dataset(p)


class TestToArrays:
    def test_shapes_and_dtypes(self):
        bars = random_walk_bars(80, seed=28)
        series = TickerSeries("S", tuple(bars))
        feats, rets = features_and_returns(series)
        samples = make_windows(feats, rets)
        x, y_ret, y_lab = to_arrays(samples)
        assert x.shape == (len(samples), 10, 15)
        assert x.dtype == np.float32
        assert set(np.unique(y_lab)) <= {0.0, 1.0}
