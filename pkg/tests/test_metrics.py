import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from karma.dataset import split_fleet
from karma.errors import EmptyInput, LengthMismatch, ZeroGroundTruth
from karma.metrics import (EvalReport, evaluate_horizon, evaluate_one_cycle, horizon_predictions, mae,
                           mape, one_cycle_predictions, rmse, write_report)
from karma.prognosis import law_predictor, oracle_predictor
from karma.synthetic import FLEET_THETAS, synthetic_fleet, synthetic_series

pairs = st.integers(1, 40).flatmap(lambda n: st.tuples(
    st.lists(st.floats(0.1, 3.0), min_size=n, max_size=n),
    st.lists(st.floats(-3.0, 3.0), min_size=n, max_size=n)))


def test_hand_values():
    assert mae([2, 4], [1, 5]) == 1.0
    assert rmse([2, 4], [1, 5]) == 1.0
    assert mape([2, 4], [1, 5]) == 37.5
    assert mae([1.5, 1.2], [1.5, 1.2]) == rmse([1.5, 1.2], [1.5, 1.2]) == mape([1.5, 1.2], [1.5, 1.2]) == 0


def test_outlier_sensitivity():
    assert rmse([0, 0, 0, 0], [2, 0, 0, 0]) == 1.0
    assert mae([0, 0, 0, 0], [2, 0, 0, 0]) == 0.5


def test_errors():
    with pytest.raises(LengthMismatch):
        mae([1, 2], [1])
    with pytest.raises(EmptyInput):
        rmse([], [])
    with pytest.raises(ZeroGroundTruth):
        mape([1, 0], [1, 1])


def test_against_naive_sums():
    rng = np.random.default_rng(0)
    y, yh = rng.uniform(1, 2, 500), rng.uniform(1, 2, 500)
    abs_sum = 0.0
    sq_sum = 0.0
    for a, b in zip(y, yh):
        abs_sum += abs(a - b)
        sq_sum += (a - b) ** 2
    assert mae(y, yh) == pytest.approx(abs_sum / 500, abs=1e-12)
    assert rmse(y, yh) == pytest.approx((sq_sum / 500) ** 0.5, abs=1e-12)


def test_mae_below_rmse_sweep():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        n = rng.integers(1, 30)
        y, yh = rng.normal(size=n), rng.normal(size=n)
        assert mae(y, yh) <= rmse(y, yh) + 1e-15


@given(pairs, st.randoms(use_true_random=False))
def test_permutation_invariance(p, rnd):
    y, yh = np.array(p[0]), np.array(p[1])
    idx = list(range(y.size))
    rnd.shuffle(idx)
    for f in (mae, rmse, mape):
        assert f(y[idx], yh[idx]) == pytest.approx(f(y, yh), rel=1e-12, abs=1e-12)
    assert mae(y, yh) <= rmse(y, yh) + 1e-12
    assert mape(y, yh) >= 0


@given(pairs, st.floats(0.01, 100))
def test_scaling(p, s):
    y, yh = np.array(p[0]), np.array(p[1])
    assert mae(s * y, s * yh) == pytest.approx(s * mae(y, yh), rel=1e-9, abs=1e-12)
    assert rmse(s * y, s * yh) == pytest.approx(s * rmse(y, yh), rel=1e-9, abs=1e-12)
    assert mape(s * y, s * yh) == pytest.approx(mape(y, yh), rel=1e-9, abs=1e-12)


# -- harness ---------------------------------------------------------------------

def test_oracle_gives_zero_error():
    fleet = synthetic_fleet()
    split = split_fleet(fleet, "S2", 50)
    row = evaluate_one_cycle(oracle_predictor(split.test.capacity), split)
    assert row.mae == row.rmse == row.mape_percent == 0.0
    assert row.n == len(split.test) - 50 and row.battery_id == "S2"
    h = evaluate_horizon(oracle_predictor(split.test.capacity), split, 5)
    assert h.mae == 0.0 and h.horizon == 5


def test_one_cycle_is_teacher_forced():
    cap = np.linspace(2.0, 1.0, 30)
    seen = []

    def pred(hist):
        seen.append(hist.copy())
        return hist[-1]

    cycles, y, yh = one_cycle_predictions(pred, cap, 20)
    np.testing.assert_array_equal(cycles, np.arange(21, 31))
    np.testing.assert_array_equal(yh, cap[19:29])
    assert all(np.array_equal(h, cap[:20 + i]) for i, h in enumerate(seen))


def test_horizon_rolls_on_own_output():
    cap = np.arange(1.0, 21.0)
    cycles, y, yh = horizon_predictions(lambda h: h[-1] + 10.0, cap, 10, 3)
    np.testing.assert_array_equal(cycles, np.arange(13, 21))
    # three steps of +10 on top of the last observed value
    np.testing.assert_array_equal(yh, cap[9:17] + 30.0)
    np.testing.assert_array_equal(y, cap[12:20])
    with pytest.raises(EmptyInput):
        horizon_predictions(lambda h: 0.0, cap, 19, 5)


def test_horizon_one_equals_one_cycle():
    s = synthetic_series(FLEET_THETAS["S1"], noise=0.005)
    p = law_predictor(FLEET_THETAS["S1"])
    assert evaluate_horizon(p, s, 1, sp=40).mae == evaluate_one_cycle(p, s, sp=40).mae


def test_report_rows_keep_order(tmp_path):
    fleet = synthetic_fleet()
    rows = [evaluate_one_cycle(oracle_predictor(s.capacity), s, sp=50) for s in fleet]
    rep = EvalReport("one_cycle", rows)
    assert [r.battery_id for r in rep.rows] == ["S1", "S2", "S3", "S4"]
    assert rep.average_mape == 0.0
    write_report([rep], tmp_path / "r.csv")
    with open(tmp_path / "r.csv", newline="") as fh:
        got = list(csv.DictReader(fh))
    assert [g["battery_id"] for g in got] == ["S1", "S2", "S3", "S4"]
    assert got[0]["task"] == "one_cycle" and float(got[0]["mae"]) == 0.0
