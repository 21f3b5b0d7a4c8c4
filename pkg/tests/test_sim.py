import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from snofcert.errors import DivergenceDetected
from snofcert.sim import (compare_configs, reference_signal, run_comparison, simulate, step_metrics,
                          trace_metrics, write_comparison_csv, write_metrics_csv)

from conftest import lti, scalar_lure


def test_one_sample_step_settles_in_one_sample():
    y = np.array([0.0] + [1.0] * 20)
    m = step_metrics(y, 0, 0.0, 1.0)
    assert m.settling_time == 1.0 and m.overshoot == 0.0 and m.ss_error == 0.0 and m.settled


def test_first_order_settling():
    # 0.9^k enters the 2% band at k = 38
    y = 1.0 - 0.9 ** np.arange(200)
    assert step_metrics(y, 0, 0.0, 1.0).settling_time == 38.0
    assert step_metrics(y, 0, 0.0, 1.0, Ts=0.5).settling_time == 19.0


def test_second_order_overshoot_and_settling():
    k = np.arange(400)
    y = 1.0 - 0.97 ** k * np.cos(np.pi * k / 10)
    m = step_metrics(y, 0, 0.0, 1.0)
    assert m.overshoot == pytest.approx(100 * 0.97 ** 10, abs=1e-10)
    # last sample outside the band is k = 121
    assert m.settling_time == 122.0


def test_step_after_offset_and_negative_direction():
    # pre-step segment is ignored; a downward step overshoots below the new setpoint
    y = np.concatenate([np.full(10, 5.0), [5.0, 2.5, 1.5, 2.0, 2.0, 2.0]])
    m = step_metrics(y, 10, 5.0, 2.0)
    assert m.overshoot == pytest.approx(100 * 0.5 / 3.0)
    assert m.settling_time == 3.0


def test_unsettled_response():
    y = 1.0 - 0.99 ** np.arange(50)
    m = step_metrics(y, 0, 0.0, 1.0)
    assert m.settling_time is None and not m.settled


def test_zero_trace_at_zero_setpoint():
    m = step_metrics(np.zeros(30), 0, 0.0, 0.0)
    assert m.settling_time == 0.0 and m.overshoot == 0.0 and m.rmse == 0.0 and m.iae == 0.0


def test_ss_error_uses_last_five_percent():
    y = np.concatenate([np.ones(95), np.full(5, 0.9)])
    assert step_metrics(y, 0, 0.0, 1.0).ss_error == pytest.approx(-0.1)


def test_rmse_and_iae():
    y = np.array([0.0, 0.5, 1.0, 1.0])
    m = step_metrics(y, 0, 0.0, 1.0, Ts=2.0)
    assert m.rmse == pytest.approx(math.sqrt(1.25 / 4))
    assert m.iae == pytest.approx(1.5 * 2.0)


@given(arrays(np.float64, st.integers(5, 60), elements=st.floats(-10, 10)), st.floats(-5, 5), st.floats(-5, 5))
def test_metric_ranges(y, r0, r1):
    m = step_metrics(y, 0, r0, r1)
    assert m.overshoot >= 0.0
    assert m.settling_time is None or 0.0 <= m.settling_time <= len(y)
    assert m.rmse >= 0.0 and m.iae >= 0.0


def test_reference_schedule():
    R = reference_signal([(3, [1.0, 2.0]), (0, [0.5, 0.5])], 6, 2)
    assert R[:3].tolist() == [[0.5, 0.5]] * 3 and R[3:].tolist() == [[1.0, 2.0]] * 3
    assert reference_signal(2.0, 3, 2).tolist() == [[2.0, 2.0]] * 3
    with pytest.raises(ValueError):
        reference_signal(np.zeros((2, 2)), 3, 2)


def test_simulate_matches_recursion():
    tr = simulate(scalar_lure(), None, 20, [1.0])
    x = 1.0
    for k in range(20):
        assert tr.y[k, 0] == pytest.approx(x, abs=1e-15)
        x = 0.5 * x + 0.4 * math.tanh(x) + 0.1
    assert tr.x[-1, 0] == pytest.approx(x, abs=1e-15)


def test_divergence_detected():
    with pytest.raises(DivergenceDetected) as err:
        simulate(lti([[2.0]]), None, 100, [1.0])
    # 2^30 > 1e9
    assert err.value.index == 30


def first_order(a):
    # x+ = a x + (1 - a) u, y = x
    return lti([[a]]).replace(Bu=[[1.0 - a]], Dyu=[[0.0]])


def test_compare_deltas_and_csv(tmp_path):
    sched = [(0, 0.0), (5, 1.0)]
    a = simulate(first_order(0.5), sched, 30)
    b = simulate(first_order(0.8), sched, 30)
    rep = compare_configs(a, b, 5, [0])
    ma, mb = trace_metrics(a, 5, [0])[0], trace_metrics(b, 5, [0])[0]
    assert ma.settling_time == 6.0 and mb.settling_time == 18.0
    assert rep[0]["delta"]["settling_time"] == 12.0
    assert rep[0]["delta"]["rmse"] == pytest.approx(mb.rmse - ma.rmse)
    write_comparison_csv(a, b, tmp_path / "c.csv", [0])
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["t", "r0", "A_0", "B_0"] and len(rows) == 31
    assert float(rows[8][2]) == 0.75 and float(rows[8][3]) == pytest.approx(0.36)
    write_metrics_csv(rep, tmp_path / "m.csv")
    assert len(list(csv.reader(open(tmp_path / "m.csv")))) == 6
    a.to_csv(tmp_path / "t.csv")
    assert len(list(csv.reader(open(tmp_path / "t.csv")))) == 31


def test_boiler_comparison_starts_settled(boiler_manifest):
    tr_a, tr_b, rep = run_comparison(boiler_manifest)
    k0 = boiler_manifest.step_index
    assert set(rep) == {"y1", "y2", "y3"}
    for tr in (tr_a, tr_b):
        # steady before the step, every output at its setpoint
        assert np.max(np.abs(tr.x[:k0] - tr.x[0])) < 1e-8
        assert np.all(np.isfinite(tr.y))
    assert np.allclose(tr_a.output("y1")[:k0], 108.0, atol=1e-8)
    assert np.allclose(tr_b.output("y3_hat")[:k0], boiler_manifest.setpoint[2], atol=1e-8)
