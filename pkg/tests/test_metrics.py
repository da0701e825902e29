import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ggforecast.metrics import EvalReport, MetricError, evaluate, mae, mre, per_step_curves, rmse

PRED = np.array([[0.4, 0.6]])
TRUTH = np.array([[0.5, 0.5]])

grids = st.integers(1, 6).flatmap(
    lambda t: st.integers(1, 8).flatmap(
        lambda b: st.tuples(
            arrays(np.float64, (t, b), elements=st.floats(-1, 1)),
            arrays(np.float64, (t, b), elements=st.floats(-1, 1)),
        )
    )
)


def test_rmse_examples():
    assert rmse(TRUTH, TRUTH) == 0.0
    assert abs(rmse(PRED, TRUTH) - 0.1) <= 1e-12


def test_mae_examples():
    assert mae(TRUTH, TRUTH) == 0.0
    assert abs(mae(PRED, TRUTH) - 0.1) <= 1e-12


def test_mre_examples():
    assert mre(TRUTH, TRUTH) == (0.0, 2)
    value, used = mre(PRED, TRUTH)
    assert abs(value - 20.0) <= 1e-12 and used == 2
    value, used = mre(np.array([[0.1, 0.9]]), np.array([[0.0, 1.0]]))
    assert used == 1 and abs(value - 10.0) <= 1e-12


def test_mre_floor_policy_counts_all_bins():
    value, used = mre(np.array([[0.1, 0.9]]), np.array([[0.0, 1.0]]), "floor")
    assert used == 2
    assert value == pytest.approx(100 / 2 * (0.1 / 1e-6 + 0.1))


def test_mre_all_zero_truth():
    with pytest.raises(MetricError, match="no nonzero truth bins"):
        mre(np.ones((2, 3)), np.zeros((2, 3)))


def test_shape_mismatch():
    for f in (rmse, mae, mre):
        with pytest.raises(MetricError):
            f(np.zeros((2, 3)), np.zeros((3, 2)))


@settings(max_examples=200, deadline=None)
@given(grids, st.floats(-10, 10))
def test_rmse_homogeneous_and_mae_bounded(pair, c):
    pred, truth = pair
    err = pred - truth
    assert rmse(truth + c * err, truth) == pytest.approx(abs(c) * rmse(pred, truth), rel=1e-9, abs=1e-12)
    assert mae(pred, truth) <= rmse(pred, truth) + 1e-15
    assert rmse(pred, truth) >= 0 and mae(pred, truth) >= 0


@settings(max_examples=100, deadline=None)
@given(grids, st.floats(0.01, 100))
def test_mre_scale_invariant(pair, c):
    pred, truth = pair
    truth = np.abs(truth) + 0.01
    assert mre(c * pred, c * truth)[0] == pytest.approx(mre(pred, truth)[0], rel=1e-9)


def test_per_step_constant_error():
    truth = np.full((4, 3), 0.5)
    pred = truth + 0.1
    steps = per_step_curves(pred, truth)
    assert all(s.rmse == pytest.approx(0.1) for s in steps)
    assert rmse(pred, truth) == pytest.approx(0.1)


def test_per_step_single_step_equals_aggregate():
    (s,) = per_step_curves(PRED, TRUTH)
    assert s.rmse == rmse(PRED, TRUTH) and s.mae == mae(PRED, TRUTH) and s.mre == mre(PRED, TRUTH)[0]


def test_per_step_aggregation_identity():
    rng = np.random.default_rng(0)
    for _ in range(50):
        pred, truth = rng.random((2, 17, 9))
        truth[rng.random(truth.shape) < 0.2] = 0.0
        steps = per_step_curves(pred, truth)
        assert abs(np.mean([s.rmse**2 for s in steps]) - rmse(pred, truth) ** 2) <= 1e-12
        assert abs(np.mean([s.mae for s in steps]) - mae(pred, truth)) <= 1e-12
        used = np.array([s.bins_used for s in steps])
        weighted = sum(s.mre * s.bins_used for s in steps if s.bins_used) / used.sum()
        value, total = mre(pred, truth)
        assert total == used.sum() and abs(weighted - value) <= 1e-9


def test_per_step_all_zero_step_is_nan():
    truth = np.array([[0.0, 0.0], [0.5, 0.5]])
    steps = per_step_curves(np.ones((2, 2)), truth)
    assert math.isnan(steps[0].mre) and steps[0].bins_used == 0


def test_report_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    pred, truth = rng.random((2, 5, 4))
    report = evaluate(pred, truth, times=range(5, 10), bins=4, horizon=5, model="lstm")
    report.write(tmp_path / "r.txt")
    back = EvalReport.read(tmp_path / "r.txt")
    assert back.rmse == report.rmse and back.mae == report.mae and back.mre_percent == report.mre_percent
    assert back.bins_used == report.bins_used
    assert [s.t for s in back.per_step] == list(range(5, 10))
    assert back.per_step[2].rmse == report.per_step[2].rmse
    assert back.config["model"] == "lstm"
