import numpy as np
import pytest

from derain.tensor import Tensor, ShapeError, conv2d, leaky_relu, mse_loss, \
    tsum, no_grad
from derain.blocks import (Conv2d, SEBlock, ConvSELayer, ConvRNNCell,
                           ConvGRUCell, ConvLSTMCell, make_cell,
                           weight_param_count)

from oracles import (fd_gradient, rel_err, scalar_rnn_step, scalar_gru_step,
                     scalar_lstm_step)


def rand_t(shape, seed=0, lo=-1.0, hi=1.0, dtype=np.float64):
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(lo, hi, shape), dtype=dtype)


# -- SE block ---------------------------------------------------------------

def test_se_zero_weights_halves_features():
    se = SEBlock(8, ratio=4, dtype=np.float64)
    for _, p in se.named_parameters():
        p.data[:] = 0.0
    x = rand_t((2, 8, 4, 4), seed=1)
    out = se(x)
    np.testing.assert_allclose(out.data, 0.5 * x.data, atol=1e-12)


def test_se_output_is_per_channel_scalar_multiple():
    se = SEBlock(4, ratio=4, rng=np.random.default_rng(3), dtype=np.float64)
    x = rand_t((1, 4, 5, 5), seed=2)
    out = se(x)
    for c in range(4):
        ratio = out.data[0, c] / x.data[0, c]
        assert np.allclose(ratio, ratio.flat[0])
        assert 0.0 < ratio.flat[0] < 1.0   # sigmoid range


def test_se_channel_mismatch():
    se = SEBlock(8, ratio=4)
    with pytest.raises(ShapeError, match="8 channels"):
        se(Tensor(np.zeros((1, 4, 2, 2))))


def test_se_ratio_must_divide_channels():
    with pytest.raises(ShapeError, match="divide"):
        SEBlock(6, ratio=4)


def test_se_gradient_vs_finite_differences():
    rng = np.random.default_rng(11)
    se = SEBlock(4, ratio=2, rng=rng, dtype=np.float64)
    x = rand_t((1, 4, 3, 3), seed=4)
    target = rand_t((1, 4, 3, 3), seed=5)
    loss = mse_loss(se(x), target)
    loss.backward()

    def f():
        with no_grad():
            return mse_loss(se(x), target).item()

    for name, p in se.named_parameters():
        picks = rng.choice(p.data.size, size=min(6, p.data.size),
                           replace=False)
        for j, g in fd_gradient(f, p.data, indices=picks).items():
            assert rel_err(p.grad.flat[j], g) < 1e-4, f"{name}[{j}]"


# -- conv+activation+SE layer ----------------------------------------------

def test_layer_without_se_equals_leaky_conv():
    rng = np.random.default_rng(6)
    layer = ConvSELayer(3, 8, 3, dilation=2, use_se=False, rng=rng,
                        dtype=np.float64)
    x = rand_t((1, 3, 6, 6), seed=7)
    expected = leaky_relu(conv2d(x, layer.conv.kernel), 0.2)
    np.testing.assert_array_equal(layer(x).data, expected.data)


def test_layer_composition_matches_manual_pipeline():
    rng = np.random.default_rng(8)
    layer = ConvSELayer(3, 8, 3, dilation=2, use_se=True, rng=rng,
                        dtype=np.float64)
    x = rand_t((2, 3, 6, 6), seed=9)
    manual = layer.se(leaky_relu(conv2d(x, layer.conv.kernel), 0.2))
    np.testing.assert_array_equal(layer(x).data, manual.data)


# -- recurrent cells --------------------------------------------------------

def _cell_io(cell, seed=0, shape=(1, 3, 5, 5)):
    x = rand_t(shape, seed=seed)
    h = rand_t((shape[0], cell.channels) + shape[2:], seed=seed + 1)
    return x, h


def test_gru_gate_closed_returns_previous_state():
    cell = ConvGRUCell(3, 4, rng=np.random.default_rng(0), dtype=np.float64)
    # large negative z-gate bias forces z ~ 0
    cell.w_zrn.kernel.bias.data[:4] = -50.0
    x, h = _cell_io(cell)
    out = cell.step(x, h)
    np.testing.assert_allclose(out.data, h.data, atol=1e-12)


def test_gru_gate_open_returns_candidate():
    cell = ConvGRUCell(3, 4, rng=np.random.default_rng(0), dtype=np.float64)
    cell.w_zrn.kernel.bias.data[:4] = 50.0
    x, h = _cell_io(cell)
    out = cell.step(x, h)
    # with z ~ 1 the output is the tanh candidate: bounded and not h_prev
    assert np.abs(out.data).max() <= 1.0
    assert not np.allclose(out.data, h.data)


def test_gru_scalar_case_matches_oracle():
    cell = ConvGRUCell(1, 1, rng=np.random.default_rng(1), dtype=np.float64)
    # single pixel + single channel: every conv collapses to a scalar mul
    wz, wr, wn = [float(cell.w_zrn.kernel.weights.data[i, 0, 1, 1])
                  for i in range(3)]
    bz, br, bn = [float(cell.w_zrn.kernel.bias.data[i]) for i in range(3)]
    uz, ur = [float(cell.u_zr.kernel.weights.data[i, 0, 1, 1])
              for i in range(2)]
    un = float(cell.u_n.kernel.weights.data[0, 0, 1, 1])
    x_val, h_val = 0.37, -0.52
    x = Tensor(np.full((1, 1, 1, 1), x_val), dtype=np.float64)
    h = Tensor(np.full((1, 1, 1, 1), h_val), dtype=np.float64)
    out = cell.step(x, h).data.flat[0]
    expected = scalar_gru_step(x_val, h_val, wz, uz, bz, wr, ur, br,
                               wn, un, bn)
    assert out == pytest.approx(expected, abs=1e-6)


def test_rnn_zero_state_kernel_is_stateless():
    cell = ConvRNNCell(2, 3, rng=np.random.default_rng(2), dtype=np.float64)
    cell.u.kernel.weights.data[:] = 0.0
    cell.w.kernel.bias.data[:] = 0.0
    x = rand_t((1, 2, 4, 4), seed=3)
    h1 = rand_t((1, 3, 4, 4), seed=4)
    h2 = rand_t((1, 3, 4, 4), seed=5)
    np.testing.assert_array_equal(cell.step(x, h1).data,
                                  cell.step(x, h2).data)


def test_rnn_state_decays_through_tanh():
    cell = ConvRNNCell(1, 1, rng=np.random.default_rng(3), dtype=np.float64)
    cell.w.kernel.weights.data[:] = 0.0
    cell.w.kernel.bias.data[:] = 0.0
    cell.u.kernel.weights.data[:] = 0.0
    cell.u.kernel.weights.data[0, 0, 1, 1] = 1.0   # identity-like state map
    x = Tensor(np.zeros((1, 1, 1, 1)), dtype=np.float64)
    h = Tensor(np.full((1, 1, 1, 1), 0.9), dtype=np.float64)
    for _ in range(5):
        h_new = cell.step(x, h)
        assert abs(h_new.data.flat[0]) < abs(h.data.flat[0])
        h = h_new


def test_rnn_scalar_case_matches_oracle():
    cell = ConvRNNCell(1, 1, rng=np.random.default_rng(4), dtype=np.float64)
    w = float(cell.w.kernel.weights.data[0, 0, 1, 1])
    b = float(cell.w.kernel.bias.data[0])
    u = float(cell.u.kernel.weights.data[0, 0, 1, 1])
    x_val, h_val = -0.8, 0.33
    x = Tensor(np.full((1, 1, 1, 1), x_val), dtype=np.float64)
    h = Tensor(np.full((1, 1, 1, 1), h_val), dtype=np.float64)
    out = cell.step(x, h).data.flat[0]
    assert out == pytest.approx(scalar_rnn_step(x_val, h_val, w, u, b),
                                abs=1e-6)


def test_lstm_memory_retention_and_output_gate():
    cell = ConvLSTMCell(2, 3, rng=np.random.default_rng(5), dtype=np.float64)
    x = rand_t((1, 2, 4, 4), seed=6)
    h = rand_t((1, 3, 4, 4), seed=7)
    c = rand_t((1, 3, 4, 4), seed=8)
    # f ~ 1 and i ~ 0 preserve the cell map
    cell.w_ifgo.kernel.bias.data[0:3] = -50.0   # i
    cell.w_ifgo.kernel.bias.data[3:6] = 50.0    # f
    _, c_new = cell.step(x, h, c)
    np.testing.assert_allclose(c_new.data, c.data, atol=1e-12)
    # o ~ 0 silences the hidden output regardless of c
    cell.w_ifgo.kernel.bias.data[9:12] = -50.0
    h_new, _ = cell.step(x, h, c)
    np.testing.assert_allclose(h_new.data, 0.0, atol=1e-12)


def test_lstm_scalar_case_matches_oracle():
    cell = ConvLSTMCell(1, 1, rng=np.random.default_rng(6), dtype=np.float64)
    wi, wf, wg, wo = [float(cell.w_ifgo.kernel.weights.data[i, 0, 1, 1])
                      for i in range(4)]
    bi, bf, bg, bo = [float(cell.w_ifgo.kernel.bias.data[i])
                      for i in range(4)]
    ui, uf, ug, uo = [float(cell.u_ifgo.kernel.weights.data[i, 0, 1, 1])
                      for i in range(4)]
    xv, hv, cv = 0.21, -0.4, 0.66
    x = Tensor(np.full((1, 1, 1, 1), xv), dtype=np.float64)
    h = Tensor(np.full((1, 1, 1, 1), hv), dtype=np.float64)
    c = Tensor(np.full((1, 1, 1, 1), cv), dtype=np.float64)
    h_new, c_new = cell.step(x, h, c)
    eh, ec = scalar_lstm_step(xv, hv, cv, wi, ui, bi, wf, uf, bf,
                              wg, ug, bg, wo, uo, bo)
    assert h_new.data.flat[0] == pytest.approx(eh, abs=1e-6)
    assert c_new.data.flat[0] == pytest.approx(ec, abs=1e-6)


# -- parameter counts -------------------------------------------------------

def test_plain_conv_weight_count():
    assert weight_param_count(Conv2d(8, 8, 3)) == 576


# Each gate carries an input-to-state kernel W and a state-to-state kernel
# U, so the exact multipliers vs one plain conv are 2x (1 gate), 6x
# (3 gates) and 8x (4 gates).
@pytest.mark.parametrize("kind,kernels", [("rnn", 2), ("gru", 6),
                                          ("lstm", 8)])
def test_recurrent_weight_counts_exact(kind, kernels):
    plain = weight_param_count(Conv2d(8, 8, 3))
    cell = make_cell(kind, 8, 8)
    assert weight_param_count(cell) == kernels * plain


def test_gru_lstm_absolute_counts():
    assert weight_param_count(make_cell("gru", 8, 8)) == 3456
    assert weight_param_count(make_cell("lstm", 8, 8)) == 4608


def test_gate_count_ratios():
    # gates per cell: rnn 1, gru 3, lstm 4; the per-gate weight block
    # (W plus U) is twice a plain conv
    plain = weight_param_count(Conv2d(8, 8, 3))
    per_gate = {"rnn": 1, "gru": 3, "lstm": 4}
    for kind, gates in per_gate.items():
        cell = make_cell(kind, 8, 8)
        assert weight_param_count(cell) == gates * 2 * plain


def test_unknown_unit_rejected():
    with pytest.raises(ValueError, match="unknown recurrent unit"):
        make_cell("peephole", 4, 4)


# -- properties -------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_gru_output_is_convex_combination(seed):
    cell = ConvGRUCell(2, 3, rng=np.random.default_rng(seed),
                       dtype=np.float64)
    x, h = _cell_io(cell, seed=seed, shape=(1, 2, 4, 4))
    out = cell.step(x, h)
    # recompute the candidate under the open gate to bound the output
    from derain.tensor import sigmoid as tsig, tanh as ttanh, add, mul, narrow
    c = cell.channels
    wx = cell.w_zrn(x)
    uh = cell.u_zr(h)
    r = tsig(add(narrow(wx, c, 2 * c), narrow(uh, c, 2 * c)))
    n = ttanh(add(narrow(wx, 2 * c, 3 * c), cell.u_n(mul(r, h))))
    lo = np.minimum(h.data, n.data)
    hi = np.maximum(h.data, n.data)
    assert np.all(out.data >= lo - 1e-12)
    assert np.all(out.data <= hi + 1e-12)


@pytest.mark.parametrize("kind", ["rnn", "gru", "lstm"])
def test_cell_step_gradient(kind):
    rng = np.random.default_rng(13)
    cell = make_cell(kind, 2, 2, dilation=2, rng=np.random.default_rng(12),
                     dtype=np.float64)
    x = rand_t((1, 2, 4, 4), seed=20)
    h = rand_t((1, 2, 4, 4), seed=21)
    c = rand_t((1, 2, 4, 4), seed=22)
    target = rand_t((1, 2, 4, 4), seed=23)

    def forward():
        if kind == "lstm":
            out, _ = cell.step(x, h, c)
        else:
            out = cell.step(x, h)
        return mse_loss(out, target)

    forward().backward()

    def f():
        with no_grad():
            return forward().item()

    for name, p in cell.named_parameters():
        picks = rng.choice(p.data.size, size=min(4, p.data.size),
                           replace=False)
        for j, g in fd_gradient(f, p.data, indices=picks).items():
            assert rel_err(p.grad.flat[j], g) < 1e-4, f"{name}[{j}]"
