import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from snofcert.errors import DegenerateColumn, DimensionChainBroken
from snofcert.plant_loop import (PiControllerSnof, PlantLti, Scaler, assemble_closed_loop, fit_scaler,
                                 load_loop_manifest, make_pi_controller, zoh_discretize)
from snofcert.sim import simulate, steady_state
from snofcert.snof import check_well_posed, eval_step

from conftest import BOILER

seeds = st.integers(0, 2**31 - 1)


def zoh_taylor(Ac, Bc, Ts, terms=120):
    # Ad = sum (Ac Ts)^k / k!,  Bd = sum Ac^k Ts^(k+1) / (k+1)! Bc
    n = Ac.shape[0]
    Ad, Bd = np.zeros((n, n)), np.zeros_like(Bc)
    term = np.eye(n)
    for k in range(terms):
        Ad += term
        Bd += term @ Bc * Ts / (k + 1)
        term = term @ Ac * Ts / (k + 1)
    return Ad, Bd


@given(seeds, st.floats(0.05, 2.0))
def test_zoh_matches_taylor(seed, Ts):
    rng = np.random.default_rng(seed)
    Ac = rng.standard_normal((3, 3))
    Ac *= min(1.0, 5.0 / (np.linalg.norm(Ac, 2) * Ts))
    Bc = rng.standard_normal((3, 2))
    Ad, Bd = zoh_discretize(Ac, Bc, Ts)
    Ad_t, Bd_t = zoh_taylor(Ac, Bc, Ts)
    scale = max(1.0, np.max(np.abs(Ad_t)))
    assert np.max(np.abs(Ad - Ad_t)) <= 1e-12 * scale
    assert np.max(np.abs(Bd - Bd_t)) <= 1e-12 * max(1.0, np.max(np.abs(Bd_t)))


def test_zoh_scalar_closed_form():
    Ad, Bd = zoh_discretize([[-0.1]], [[2.0]], 1.0)
    assert Ad[0, 0] == pytest.approx(math.exp(-0.1), abs=1e-15)
    assert Bd[0, 0] == pytest.approx(2.0 * (1 - math.exp(-0.1)) / 0.1, abs=1e-14)
    with pytest.raises(ValueError):
        zoh_discretize([[1.0]], [[1.0]], 0.0)


@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4), seeds)
def test_scaler_round_trip(v, seed):
    rng = np.random.default_rng(seed)
    sc = Scaler(rng.uniform(0.01, 10, 4), rng.uniform(-5, 5, 4))
    v = np.array(v)
    assert np.allclose(sc.inverse(sc.forward(v)), v, rtol=1e-12, atol=1e-12)
    assert np.allclose(sc.output_inverse(sc.output([0.3])), [0.3], atol=1e-15)


def test_fit_scaler_extremes_and_degenerate():
    data = np.array([[0.0, 5.0], [2.0, 7.0], [1.0, 6.0]])
    sc = fit_scaler(data, -1.0, 1.0)
    out = sc.forward(data)
    assert np.allclose(out.min(axis=0), -1.0) and np.allclose(out.max(axis=0), 1.0)
    with pytest.raises(DegenerateColumn):
        fit_scaler(np.array([[1.0, 2.0], [1.0, 3.0]]))


def test_pi_controller_recursion():
    c = make_pi_controller([2.0], [0.5], 0.1, -10.0, 10.0)
    x = np.zeros(1)
    errs = [1.0, -0.5, 2.0, 0.25]
    for k, e in enumerate(errs):
        st_ = eval_step(c.snof, x, [e])
        want = 2.0 * e + 0.5 * 0.1 * sum(errs[:k])
        assert st_.p[0] == pytest.approx(want, abs=1e-14)
        x = st_.x_next


def test_controller_saturation():
    c = make_pi_controller([1.0], [0.0], 1.0, 0.0, 1.0)
    assert eval_step(c.snof, [0.0], [5.0]).p[0] == 1.0
    assert eval_step(c.snof, [0.0], [-5.0]).p[0] == 0.0


def test_controller_round_trip():
    c = PiControllerSnof.from_dict(json.loads((BOILER / "controller.json").read_text()))
    d = PiControllerSnof.from_dict(c.to_dict())
    assert np.array_equal(c.snof.Cq, d.snof.Cq) and np.array_equal(c.y_max, d.y_max)


def test_plant_fixture_is_zoh_of_continuous():
    raw = json.loads((BOILER / "plant.json").read_text())
    p = PlantLti.from_dict(raw)
    Ad, Bd = zoh_taylor(np.array(raw["A"]), np.array(raw["B"]), raw["Ts"])
    assert np.max(np.abs(p.A - Ad)) < 1e-12 and np.max(np.abs(p.B - Bd)) < 1e-12


def cosimulate(m, cl, r_seq, x0):
    """Plant, saturated PI controller and scaled sensor stepped side by side."""
    ctrl, plant, sensor, sc = m.controller.snof, m.plant, m.sensor, m.scaler
    parts = cl.split_state(x0)
    xc, xp, xn, z = (parts[k].copy() for k in ("c", "p", "n", "z"))
    names = list(cl.output_names)
    Y = []
    for r in r_seq:
        e = r - z
        p_c = np.clip(ctrl.Cq @ xc + ctrl.Dqu @ e + ctrl.beta_q, m.controller.y_min, m.controller.y_max)
        y_meas = plant.C_delta @ xp + plant.D_delta @ p_c
        ev = eval_step(sensor, xn, sc.forward(np.concatenate([y_meas, p_c])))
        y = np.concatenate([y_meas, sc.output(ev.y), plant.hidden_output(xp, p_c)])
        Y.append(y)
        xc = ctrl.A @ xc + ctrl.Bu @ e
        xp = plant.A @ xp + plant.B @ p_c
        xn = ev.x_next
        z = np.array([y[names.index(f)] for f in cl.feedback])
    return np.array(Y)


def test_closed_loop_matches_cosimulation(boiler_manifest):
    m = boiler_manifest
    cl = m.assemble(sensor=True)
    sched = m.schedule_for(True)
    x0 = steady_state(cl, sched[0][1])
    rng = np.random.default_rng(0)
    x0 = x0 + rng.normal(0, 0.01, x0.size)
    tr = simulate(cl, sched, 120, x0)
    Y = cosimulate(m, cl, tr.r, x0)
    assert np.max(np.abs(tr.y - Y)) < 1e-9


def test_boiler_well_posed_structurally(boiler_manifest):
    for sensor in (True, False):
        rep = check_well_posed(boiler_manifest.assemble(sensor).snof)
        assert rep.verdict and rep.proof and rep.det_one and rep.method == "strictly-triangular"


def test_delay_variants_share_the_plant_equilibrium(boiler_manifest):
    m = boiler_manifest
    r = m.setpoint
    cl1 = m.assemble(True)
    cl0 = assemble_closed_loop(m.plant, m.controller, m.sensor, m.scaler, m.feedback, 0, m.sensor_names)
    x1, x0 = steady_state(cl1, r), steady_state(cl0, r)
    assert np.allclose(x1[cl1.state_slices["p"]], x0[cl0.state_slices["p"]], atol=1e-8)
    assert np.allclose(x1[cl1.state_slices["p"]], [108.0, 117.417, 428.0], atol=1e-8)


def test_boiler_equilibrium_is_interior(boiler_manifest):
    cl = boiler_manifest.assemble(True)
    x = steady_state(cl, boiler_manifest.setpoint)
    p_c = eval_step(cl.snof, x, boiler_manifest.setpoint).p[cl.channel_slices["c"]]
    assert np.all((p_c > 0.0) & (p_c < 1.0))


def test_unknown_feedback_name(boiler_manifest):
    m = boiler_manifest
    with pytest.raises(DimensionChainBroken):
        assemble_closed_loop(m.plant, m.controller, m.sensor, m.scaler, ["y1", "y2", "nope"], 1, m.sensor_names)


def test_manifest_rejects_non_manifest(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"dims": {}}')
    with pytest.raises(ValueError):
        load_loop_manifest(p)


def test_sensor_cell_reproduces_the_state_update():
    from snofcert.rnn import LpGrnnCell, lpgrnn_to_snof
    from snofcert.snof import Snof

    published = Snof.from_json(BOILER / "sensor.json")
    exported = lpgrnn_to_snof(LpGrnnCell.from_json(BOILER / "sensor_cell.json"))
    for k, v in published.matrices().items():
        if k == "Dyp":
            continue
        assert np.allclose(getattr(exported, k), v, rtol=0, atol=1e-15), k
    # the published output row is not W_out [A, Bp] for any single W_out; it is used as given
    assert not np.allclose(exported.Dyp, published.Dyp)
