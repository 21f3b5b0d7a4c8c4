import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from snofcert.dataset import synth_sequences
from snofcert.errors import DimensionMismatch, DivergedLoss
from snofcert.rnn import (GruCell, LpGrnnCell, TrainConfig, analyze_gating, componentwise_field,
                          effective_memory, gru_forward, gru_to_snof_like, hadamard_field, loss_and_grad,
                          lpgrnn_forward, lpgrnn_from_snof, lpgrnn_intermediate, lpgrnn_rollout,
                          lpgrnn_to_snof, rmse, sensitivity_curve, staircase_integral, train_bptt)
from snofcert.rnn.lpgrnn import logit
from snofcert.snof import check_well_posed, rollout

seeds = st.integers(0, 2**31 - 1)


def sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


def lpgrnn_max_diff(cell, rng, steps=50):
    X = rng.uniform(-2, 2, (steps, cell.n_x))
    h0 = rng.uniform(-1, 1, cell.n_h)
    H, Y = lpgrnn_rollout(cell, h0, X)
    s = lpgrnn_to_snof(cell)
    Xs, Ys = rollout(s, h0, X)
    # the SNOF output reads x_k and p_k, i.e. the output after the update
    return max(np.max(np.abs(H - Xs)), np.max(np.abs(Y - Ys)))


@given(seeds)
def test_lpgrnn_export_equivalence(seed):
    rng = np.random.default_rng(seed)
    cell = LpGrnnCell.random(4, 3, 2, rng=rng)
    assert lpgrnn_max_diff(cell, rng) < 1e-10


def test_lpgrnn_recurrence_by_hand():
    # one unit: r = s(wr x), ht = tanh(wh x + g r), h+ = (1 - s(a)) ht + s(a) h
    c = LpGrnnCell.zeros(1, 1).replace(W_rx=[[0.7]], W_hx=[[-0.4]], G=[[1.3]], alpha=[0.2], W_out=[[2.0]])
    h, y = lpgrnn_forward(c, np.array([0.5]), np.array([1.0]))
    r = sigmoid(0.7)
    ht = np.tanh(-0.4 + 1.3 * r)
    want = (1 - sigmoid(0.2)) * ht + sigmoid(0.2) * 0.5
    assert h[0] == pytest.approx(want, abs=1e-15)
    assert y[0] == pytest.approx(2.0 * want, abs=1e-15)


def test_export_is_all_tanh_and_well_posed():
    cell = LpGrnnCell.random(5, 2, rng=np.random.default_rng(0))
    s = lpgrnn_to_snof(cell)
    assert all(ch.kind == "tanh" for ch in s.nl.channels)
    assert np.allclose(s.A, np.diag(cell.mix))
    nh = cell.n_h
    assert np.allclose(s.Dqp[:nh, nh:], 0.5 * cell.G)
    rep = check_well_posed(s)
    assert rep.verdict and rep.det_one


def test_intermediate_keeps_sigmoid_gate():
    cell = LpGrnnCell.random(3, 2, rng=np.random.default_rng(1))
    kinds = [c.kind for c in lpgrnn_intermediate(cell).nl.channels]
    assert kinds == ["tanh"] * 3 + ["sigmoid"] * 3


@given(seeds)
def test_from_snof_inverts_export(seed):
    rng = np.random.default_rng(seed)
    cell = LpGrnnCell.random(3, 2, rng=rng)
    back = lpgrnn_from_snof(lpgrnn_to_snof(cell), W_out=cell.W_out, b_out=cell.b_out)
    X = rng.uniform(-2, 2, (20, 2))
    H1, Y1 = lpgrnn_rollout(cell, np.zeros(3), X)
    H2, Y2 = lpgrnn_rollout(back, np.zeros(3), X)
    assert np.max(np.abs(H1 - H2)) < 1e-12 and np.max(np.abs(Y1 - Y2)) < 1e-12


@given(seeds, st.floats(0.0, 3.0))
def test_hidden_state_bounded(seed, h0_scale):
    rng = np.random.default_rng(seed)
    cell = LpGrnnCell.random(4, 2, rng=rng, scale=3.0)
    h0 = h0_scale * rng.uniform(-1, 1, 4)
    H, _ = lpgrnn_rollout(cell, h0, rng.uniform(-5, 5, (40, 2)))
    assert np.max(np.abs(H)) <= max(np.max(np.abs(h0)), 1.0) + 1e-15


@pytest.mark.parametrize("enc", ["logit", "post_sigmoid"])
def test_cell_serialization(tmp_path, enc):
    cell = LpGrnnCell.random(3, 2, rng=np.random.default_rng(0))
    cell.to_json(tmp_path / "c.json", alpha_encoding=enc)
    back = LpGrnnCell.from_json(tmp_path / "c.json")
    assert np.allclose(back.mix, cell.mix, atol=1e-14, rtol=0)
    assert np.array_equal(back.W_rx, cell.W_rx)


def test_dimension_errors():
    cell = LpGrnnCell.random(3, 2, rng=np.random.default_rng(0))
    with pytest.raises(DimensionMismatch):
        lpgrnn_forward(cell, np.zeros(4), np.zeros(2))


@given(seeds)
def test_gru_snof_like_equivalence(seed):
    rng = np.random.default_rng(seed)
    cell = GruCell.random(3, 2, rng=rng)
    g = gru_to_snof_like(cell)
    h = rng.uniform(-1, 1, 3)
    for x in rng.uniform(-2, 2, (30, 2)):
        h_ref = gru_forward(cell, h, x)
        h, _, _ = g.step(h, x)
        assert np.max(np.abs(h - h_ref)) < 1e-12


def test_gru_certifiable_mask():
    g = gru_to_snof_like(GruCell.zeros(2, 1))
    assert g.certifiable.tolist() == [False, False, True, True, False, False]


def test_gating_tanh_field_is_conservative():
    rng = np.random.default_rng(0)
    res = analyze_gating(componentwise_field(), rng.uniform(-2, 2, (10, 2)), segments=500)
    assert res.max_asymmetry < 1e-8
    assert np.max(res.path_discrepancy) < 1e-10


def test_gating_hadamard_closed_form():
    # J(u, v) = [[s'(u), 0], [s'(u) v, s(u)]]; at (0, 1) the off-diagonal gap is s'(0) = 1/4
    res = analyze_gating(hadamard_field(), [[0.0, 1.0], [1.0, 1.0]], segments=2000)
    assert res.asymmetry[0] == pytest.approx(0.25, abs=1e-8)
    # u-first: ln((1+e)/2) + s(1)/2; v-first: 1/4 + ln((1+e)/2); gap s(1)/2 - 1/4
    assert res.path_discrepancy[1] == pytest.approx(sigmoid(1.0) / 2 - 0.25, abs=1e-10)


def test_staircase_integral_potential():
    # tanh field is the gradient of sum log cosh
    val = staircase_integral(componentwise_field(), [0.7, -1.2], [1, 0], segments=1000)
    assert val == pytest.approx(np.log(np.cosh(0.7)) + np.log(np.cosh(-1.2)), abs=1e-12)


def numeric_grad(cell, X, Y, name, step=1e-6):
    p = cell.params()
    g = np.zeros_like(p[name])
    for idx in np.ndindex(g.shape):
        for sgn in (1, -1):
            q = p[name].copy()
            q[idx] += sgn * step
            loss, _ = loss_and_grad(cell.replace(**{name: q}), X, Y)
            g[idx] += sgn * loss / (2 * step)
    return g


def test_bptt_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    cell = LpGrnnCell.random(2, 3, rng=rng, scale=0.7)
    X, Y = rng.uniform(-1, 1, (4, 5, 3)), rng.uniform(-1, 1, (4, 1))
    _, g = loss_and_grad(cell, X, Y)
    for name in cell.params():
        num = numeric_grad(cell, X, Y, name)
        err = np.linalg.norm(g[name] - num) / max(np.linalg.norm(num), 1e-8)
        assert err < 1e-4, name


def test_zero_epochs_returns_input():
    cell = LpGrnnCell.init(3, 1, rng=np.random.default_rng(0))
    data = synth_sequences(count=50, seed=1)
    best, trace = train_bptt(cell, data, epochs=0)
    assert best is cell and trace == []


def test_training_is_seeded():
    data = synth_sequences(count=200, seed=1)
    cell = LpGrnnCell.init(3, 1, rng=np.random.default_rng(0))
    a, ta = train_bptt(cell, data, epochs=3, seed=5)
    b, tb = train_bptt(cell, data, epochs=3, seed=5)
    assert ta == tb
    assert all(np.array_equal(a.params()[k], b.params()[k]) for k in a.params())


def test_training_beats_constant_predictor():
    data = synth_sequences(count=2000, seed=0)
    cell = LpGrnnCell.init(3, 1, rng=np.random.default_rng(0))
    best, trace = train_bptt(cell, data, TrainConfig(epochs=200, seed=0))
    baseline = float(np.std(data.Y))
    assert rmse(best, data) < 0.5 * baseline
    assert rmse(best, data) == pytest.approx(min(trace))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_diverged_loss_raises():
    data = synth_sequences(count=64, seed=0)
    cell = LpGrnnCell.init(3, 1, rng=np.random.default_rng(0))
    with pytest.raises(DivergedLoss):
        train_bptt(cell, data, epochs=5, lr=1e308)


def test_effective_memory_limits():
    base = LpGrnnCell.random(3, 2, rng=np.random.default_rng(0))
    # sigma(20) ~ 1: the state barely moves, inputs leave a trace at every lag
    frozen = base.replace(alpha=np.full(3, 20.0))
    assert effective_memory(frozen, 25) == 25
    # sigma(-20) ~ 0 and no recurrent paths: only the current input matters
    z = np.zeros((3, 3))
    memoryless = base.replace(alpha=np.full(3, -20.0), W_hh=z, W_rh=z)
    assert effective_memory(memoryless, 25) == 0


@pytest.mark.parametrize("seed", range(5))
def test_sensitivity_curve_monotone_for_init_cells(seed):
    cell = LpGrnnCell.init(3, 6, rng=np.random.default_rng(seed))
    curve = sensitivity_curve(cell, 30)
    assert np.all(np.diff(curve) <= 1e-15)
    assert 1 <= effective_memory(cell, 30) <= 30


def test_logit_inverts_sigmoid():
    p = np.linspace(0.01, 0.99, 50)
    assert np.allclose(sigmoid(logit(p)), p, atol=1e-15)
