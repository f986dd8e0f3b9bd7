"""Error metrics, convergence time and report files."""

import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from softsensor import metrics
from softsensor.errors import ConfigError
from softsensor.systems import Trajectory


def traj(states, dt=0.1):
    states = np.asarray(states, dtype=float)
    N1 = len(states)
    return Trajectory(np.arange(N1) * dt, states, np.zeros((N1, 1)), np.zeros((N1, 1)))


def test_constant_offset_in_one_state():
    # offset c on one of n states: MAE = c/n, MSE = c^2/n, RMSE = c/sqrt(n)
    n, c = 4, 0.37
    x = np.random.default_rng(0).uniform(1, 2, (50, n))
    xh = x.copy()
    xh[:, 2] += c
    r = metrics.aggregate_metrics(traj(x), traj(xh))
    assert r.mae == pytest.approx(c / n, rel=1e-12)
    assert r.mse == pytest.approx(c * c / n, rel=1e-12)
    assert r.rmse == pytest.approx(c / np.sqrt(n), rel=1e-12)


def test_smape_opposite_signs_is_200_percent_and_zero_truth_100():
    x = np.ones((10, 2))
    r = metrics.aggregate_metrics(traj(x), traj(-x))
    assert r.smape_percent == pytest.approx(200.0, rel=1e-12)
    r = metrics.aggregate_metrics(traj(np.zeros((10, 2))), traj(x))
    assert r.smape_percent == pytest.approx(200.0, rel=1e-12)
    r = metrics.aggregate_metrics(traj(x), traj(3 * x))
    assert r.smape_percent == pytest.approx(100.0, rel=1e-12)


def test_tiny_and_huge_errors_keep_rmse_above_mae():
    for c in (1e-179, 1e200):
        r = metrics.aggregate_metrics(traj(np.zeros((4, 2))), traj(np.full((4, 2), c)))
        assert r.rmse == pytest.approx(c, rel=1e-12)
        assert r.mae <= r.rmse


def test_smape_extreme_magnitudes():
    for c in (5e-324, 1e-300, 1e308):
        r = metrics.aggregate_metrics(traj(np.zeros((3, 1))), traj(np.full((3, 1), c)))
        assert r.smape_percent == pytest.approx(200.0, rel=1e-12)
    # the difference overflows but the ratio is still 2
    terms = metrics.smape_terms(np.array([1.5e308]), np.array([-1.5e308]))
    assert terms[0] == pytest.approx(2.0, rel=1e-12)


def test_smape_zero_over_zero_counts_as_zero():
    z = np.zeros((5, 2))
    assert metrics.aggregate_metrics(traj(z), traj(z)).smape_percent == 0.0


pairs = st.integers(2, 30).flatmap(lambda k: st.tuples(
    arrays(np.float64, (k, 3), elements=st.floats(-1e3, 1e3)),
    arrays(np.float64, (k, 3), elements=st.floats(-1e3, 1e3)),
))


@given(pairs)
def test_mae_below_rmse_and_rmse_squared_is_mse(pair):
    x, xh = pair
    r = metrics.aggregate_metrics(traj(x), traj(xh))
    assert r.mae <= r.rmse * (1 + 1e-12) + 1e-300
    assert r.rmse ** 2 == pytest.approx(r.mse, rel=1e-12, abs=1e-300)
    assert 0.0 <= r.smape_percent <= 200.0


def test_burn_in_drops_early_samples():
    x = np.zeros((11, 1))
    xh = np.zeros((11, 1))
    xh[:5] = 10.0
    r = metrics.aggregate_metrics(traj(x), traj(xh), burn_in=0.5)
    assert r.mae == 0.0
    assert r.samples == 6
    with pytest.raises(ConfigError):
        metrics.aggregate_metrics(traj(x), traj(xh), burn_in=1.0)


def test_misaligned_inputs():
    with pytest.raises(ConfigError):
        metrics.aggregate_metrics(traj(np.zeros((5, 2))), traj(np.zeros((5, 3))))
    with pytest.raises(ConfigError):
        metrics.aggregate_metrics(traj(np.zeros((5, 2))), traj(np.zeros((5, 2)), dt=0.2))


def test_convergence_time_requires_dwell():
    e = np.ones(100)
    e[20:30] = 0.0      # short dip, 0.9 s
    e[50:] = 0.0
    assert metrics.convergence_time(e, 1e-2, 1.0, dt=0.1) == pytest.approx(5.0)
    assert metrics.convergence_time(np.ones(10), 1e-2, 1.0, dt=0.1) is None
    assert metrics.convergence_time(np.zeros(10), 1e-2, 0.0, dt=0.1) == 0.0


def test_convergence_time_needs_a_clock():
    with pytest.raises(ConfigError):
        metrics.convergence_time(np.zeros(3))


def test_exponential_decay_convergence_time():
    t = np.arange(0, 10.0001, 0.01)
    e = np.exp(-t)
    # exp(-t) < 1e-2 for t > ln(100)
    conv = metrics.convergence_time(e, 1e-2, 1.0, times=t)
    assert conv == pytest.approx(np.log(100), abs=0.011)


def test_set_mean_and_pooled():
    a = metrics.aggregate_metrics(traj(np.zeros((4, 1))), traj(np.ones((4, 1))))
    b = metrics.aggregate_metrics(traj(np.zeros((8, 1))), traj(3 * np.ones((8, 1))))
    m = metrics.set_mean([a, b])
    assert m["mae"] == pytest.approx(2.0)
    pooled = metrics.pooled_metrics([(traj(np.zeros((4, 1))), traj(np.ones((4, 1)))),
                                     (traj(np.zeros((8, 1))), traj(3 * np.ones((8, 1))))])
    assert pooled["mae"] == pytest.approx((4 * 1 + 8 * 3) / 12)
    with pytest.raises(ConfigError):
        metrics.set_mean([])


def test_report_files(tmp_path):
    r = metrics.aggregate_metrics(traj(np.zeros((4, 2))), traj(np.full((4, 2), 0.5)))
    metrics.write_report_csv(tmp_path / "m.csv", r)
    rows = list(csv.reader(open(tmp_path / "m.csv")))
    assert rows[0] == ["mse", "rmse", "mae", "smape_percent"]
    assert [float(v) for v in rows[1]] == [0.25, 0.5, 0.5, 200.0]
    metrics.write_report_json(tmp_path / "m.json", r, {"label": "x"})
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["rmse"] == 0.5 and doc["label"] == "x"


normal_pairs = st.integers(2, 30).flatmap(lambda k: st.tuples(
    arrays(np.float64, (k, 3), elements=st.floats(-1e3, 1e3, allow_subnormal=False)),
    arrays(np.float64, (k, 3), elements=st.floats(-1e3, 1e3, allow_subnormal=False)),
))


# powers of two scale exactly, so the scaled pair is the same data in a new unit
@given(normal_pairs, st.integers(-10, 10).map(lambda e: 2.0 ** e))
def test_smape_symmetry_and_scaling(pair, c):
    x, xh = pair
    r = metrics.aggregate_metrics(traj(x), traj(xh))
    swapped = metrics.aggregate_metrics(traj(xh), traj(x))
    scaled = metrics.aggregate_metrics(traj(c * x), traj(c * xh))
    assert swapped.smape_percent == pytest.approx(r.smape_percent, rel=1e-12, abs=1e-12)
    assert scaled.smape_percent == pytest.approx(r.smape_percent, rel=1e-9, abs=1e-9)
    assert scaled.mae == pytest.approx(c * r.mae, rel=1e-9, abs=1e-300)
    assert scaled.rmse == pytest.approx(c * r.rmse, rel=1e-9, abs=1e-300)
