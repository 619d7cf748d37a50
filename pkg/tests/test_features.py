import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from karma.dataset import CapacitySeries
from karma.errors import ConstantChannel, SequenceTooShort, ShapeMismatch, WindowTooLong
from karma.features import (BandPartition, ChannelScaler, causal_windows, denormalize, latest_window,
                            load_windows, make_windows, partition_bands, partition_by_count,
                            save_windows, zero_crossing_rate)
from karma.synthetic import FLEET_THETAS, synthetic_series
from karma.vmd import ImfSet, VmdConfig, decompose


def imfset(modes, omegas=None):
    modes = np.atleast_2d(np.asarray(modes, dtype=float))
    k, n = modes.shape
    om = np.arange(k) / (2.0 * k) if omegas is None else np.asarray(omegas, dtype=float)
    return ImfSet(modes, om, np.zeros(n))


# -- zero crossing rate -------------------------------------------------------

def test_zcr_examples():
    assert zero_crossing_rate([1, -1, 1, -1]) == 0.75
    assert zero_crossing_rate([5, 4, 3, 2, 1]) == 0.0
    t = np.arange(100) / 100
    assert zero_crossing_rate(np.sin(2 * np.pi * 5 * t)) == pytest.approx(0.10, abs=1e-12)


def test_zcr_touching_zero_is_not_a_crossing():
    assert zero_crossing_rate([1, 0, 1, 2]) == 0.0
    assert zero_crossing_rate([1, 0, -1, -2]) == 0.25
    assert zero_crossing_rate(np.zeros(5)) == 0.0


def test_zcr_too_short():
    with pytest.raises(SequenceTooShort):
        zero_crossing_rate([1.0])


@given(st.lists(st.floats(-5, 5, allow_nan=False).map(lambda v: 0.0 if abs(v) < 0.5 else v),
                min_size=2, max_size=80))
def test_zcr_matches_sign_walk(xs):
    x = np.asarray(xs)
    nz = x[x != 0]
    # strict flips between consecutive non-zero samples
    flips = int(np.count_nonzero(np.sign(nz[1:]) != np.sign(nz[:-1])))
    # leaving a run of leading zeros counts once
    lead = 1 if x[0] == 0 and nz.size else 0
    assert zero_crossing_rate(x) == pytest.approx((flips + lead) / x.size, abs=0)
    assert 0.0 <= zero_crossing_rate(x) <= 1.0


# -- band partition -------------------------------------------------------------

def _mode_with_zcr(rate, n=200):
    flips = int(round(rate * n))
    x = np.ones(n)
    if flips:
        idx = np.linspace(1, n - 1, flips).astype(int)
        for i in idx:
            x[i:] *= -1
    return x


def test_partition_example():
    modes = [_mode_with_zcr(0.005), _mode_with_zcr(0.2)]
    part = partition_bands(imfset(modes))
    assert part.low == [0] and part.high == [1]
    assert part.zcr_values[0] == pytest.approx(0.005)


def test_partition_constant_mode_warns():
    with pytest.warns(RuntimeWarning):
        part = partition_bands(imfset([np.full(20, 3.0)]))
    assert part.low == [0] and part.high == [] and part.one_sided


def test_partition_boundary_is_low():
    part = partition_bands(imfset([_mode_with_zcr(0.01), _mode_with_zcr(0.3)]))
    assert part.zcr_values[0] == pytest.approx(0.01)
    assert 0 in part.low


@settings(max_examples=150)
@given(st.lists(st.integers(0, 40), min_size=1, max_size=8), st.floats(0.0, 0.2))
def test_partition_disjoint_and_exhaustive(flips, threshold):
    modes = [_mode_with_zcr(f / 200) for f in flips]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        part = partition_bands(imfset(modes), threshold)
    assert sorted(part.low + part.high) == list(range(len(modes)))
    assert not set(part.low) & set(part.high)
    assert all(part.zcr_values[i] > threshold for i in part.high)
    assert all(part.zcr_values[i] <= threshold for i in part.low)
    assert part.one_sided == (not part.low or not part.high)


def test_partition_by_count_uses_frequency_order():
    imfs = imfset(np.ones((3, 10)), omegas=[0.3, 0.0, 0.1])
    part = partition_by_count(imfs, 2)
    assert part.low == [1, 2] and part.high == [0]
    with pytest.raises(ShapeMismatch):
        partition_by_count(imfs, 4)


# -- scaling ----------------------------------------------------------------------

def test_minmax_examples():
    sc = ChannelScaler.fit(np.array([2.0, 4.0, 6.0])[:, None])
    np.testing.assert_allclose(sc.transform(np.array([2.0, 4.0, 6.0])[:, None])[:, 0], [0, 0.5, 1])
    flat = ChannelScaler.fit(np.array([3.0, 3.0, 3.0])[:, None])
    np.testing.assert_array_equal(flat.transform(np.array([3.0, 3.0, 3.0])[:, None])[:, 0], [0, 0, 0])
    assert flat.constant[0]


def test_denormalize_examples():
    assert denormalize(0.5, (2, 6)) == 4
    assert denormalize(0, (2, 6)) == 2
    with pytest.raises(ConstantChannel):
        denormalize(0.5, (3, 3))


@given(st.floats(-100, 100), st.floats(1e-3, 100), st.floats(0, 1))
def test_denormalize_roundtrip(lo, span, u):
    hi = lo + span
    value = lo + u * span
    sc = ChannelScaler([lo], [hi])
    assert denormalize(sc.transform(np.array([[value]]))[0, 0], (lo, hi)) == pytest.approx(value, abs=1e-12 * max(1, abs(value)) + 1e-12)


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=30).filter(lambda v: max(v) > min(v)))
def test_normalization_idempotent(values):
    v = np.asarray(values)[:, None]
    once = ChannelScaler.fit(v).transform(v)
    twice = ChannelScaler([0.0], [1.0]).transform(once)
    np.testing.assert_array_equal(once, twice)
    assert once.min() == 0.0 and once.max() == 1.0


# -- windows ----------------------------------------------------------------------

def _series(n):
    return CapacitySeries("w", np.arange(1, n + 1), np.linspace(1.9, 1.5, n), 2.0)


def test_window_example():
    s = _series(10)
    imfs = imfset(np.vstack([s.capacity, np.sin(np.arange(10))]))
    ds = make_windows(imfs, BandPartition([0], [1], np.zeros(2)), s, window_len=8)
    assert len(ds) == 2
    np.testing.assert_array_equal(ds.target_cycles, [9, 10])
    np.testing.assert_array_equal(ds.targets, s.capacity[8:])
    assert ds.low_windows.shape == (2, 8, 1) and ds.high_windows.shape == (2, 8, 1)


@settings(max_examples=150)
@given(st.integers(2, 60), st.data())
def test_window_count_law(L, data):
    w = data.draw(st.integers(1, L - 1))
    k = data.draw(st.integers(1, 4))
    n_low = data.draw(st.integers(0, k))
    s = _series(L)
    modes = np.random.default_rng(L * 7 + w).normal(size=(k, L))
    part = BandPartition(list(range(n_low)), list(range(n_low, k)), np.zeros(k))
    ds = make_windows(imfset(modes), part, s, window_len=w)
    assert len(ds) == L - w
    assert ds.low_windows.shape == (L - w, w, n_low)
    assert ds.high_windows.shape == (L - w, w, k - n_low)
    assert np.all((ds.low_windows >= 0) & (ds.low_windows <= 1))
    assert np.all((ds.high_windows >= 0) & (ds.high_windows <= 1))


def test_window_too_long():
    s = _series(8)
    with pytest.raises(WindowTooLong):
        make_windows(imfset(np.ones((1, 8))), BandPartition([0], [], np.zeros(1)), s, window_len=8)


def test_scalers_from_training_region_only():
    s = _series(30)
    modes = np.vstack([np.arange(30.0), np.zeros(30)])
    ds = make_windows(imfset(modes), BandPartition([0], [1], np.zeros(2)), s, window_len=4, fit_until=10)
    # windows with targets up to cycle 10 cover cycles 1..9 -> values 0..8
    assert ds.low_scaler.mins[0] == 0 and ds.low_scaler.maxs[0] == 8
    assert ds.target_scaler.maxs[0] == pytest.approx(s.capacity[4])
    assert ds.constant_channels["high"][0]


def test_causal_windows_only_see_the_past():
    s = synthetic_series(FLEET_THETAS["S1"], noise=0.005)
    cfg = VmdConfig(k_max=3)
    raw = causal_windows(s, cfg, n_low=1, window_len=8, last_target=30)
    assert raw.target_cycles[0] == 17 and raw.target_cycles[-1] == 30
    # the window for target t equals the tail of a decomposition of cycles 1..t-1 alone
    t = 25
    lo, hi = latest_window(s.capacity[:t - 1], cfg, 1, 8)
    i = int(np.flatnonzero(raw.target_cycles == t)[0])
    np.testing.assert_array_equal(raw.low[i], lo)
    np.testing.assert_array_equal(raw.high[i], hi)
    # and changing the future does not change it
    future = s.capacity.copy()
    future[t - 1:] += 0.3
    lo2, _ = latest_window(future[:t - 1], cfg, 1, 8)
    np.testing.assert_array_equal(lo, lo2)


def test_window_cache_roundtrip(tmp_path):
    s = _series(20)
    imfs = decompose(s.capacity, VmdConfig(k_max=2))
    ds = make_windows(imfs, partition_by_count(imfs, 1), s, window_len=5)
    save_windows(tmp_path / "w.bin", ds)
    back = load_windows(tmp_path / "w.bin")
    np.testing.assert_array_equal(back.low_windows, ds.low_windows)
    np.testing.assert_array_equal(back.high_windows, ds.high_windows)
    np.testing.assert_array_equal(back.targets, ds.targets)
    assert back.scalers == ds.scalers
