import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowseq.nn import (Adam, AdamState, ConvLSTMCellParams, LSTMCellParams, NonFiniteError, Tensor,
                        add, adam_update, backward, blend, conv1d_same, convlstm_step, dropout,
                        l2_normalize, linear, masked_nll, maxpool1d, mul, no_grad, parameter,
                        reshape, scale, sigmoid, softmax, stack, sub, sum_squares, tanh,
                        lstm_step, xavier_uniform)
from flowseq.nn.tensor import neg

from gradcheck import max_rel_error

RNG = np.random.default_rng(0)


def _p(*shape):
    return parameter(RNG.normal(size=shape))


# --- primitive gradients ----------------------------------------------------

def _sum_weighted(t, w):
    return sum_squares([mul(t, w)])


@pytest.mark.parametrize("name", ["add_broadcast", "sub", "neg", "mul", "sigmoid", "tanh", "blend",
                                  "getitem", "getitem_fancy", "reshape", "stack", "linear", "conv",
                                  "maxpool", "l2norm", "scale", "nll"])
def test_primitive_gradients(name):
    a, b = _p(3, 4), _p(4)
    w = Tensor(RNG.normal(size=(3, 4)))
    x3, k = _p(2, 2, 7), _p(3, 2, 3)
    bias = _p(3)
    lin_w = _p(5, 4)
    mask = np.array([True, False, True])[:, None]
    targets = np.array([[1, 0, 3, 2], [4, 4, 0, 1], [2, 2, 2, 2]])
    nll_mask = RNG.random((3, 4)) > 0.3
    nll_mask[0, 0] = True
    logits = _p(3, 4, 5)
    w26 = Tensor(RNG.normal(size=(2, 6)))
    builders = {
        "add_broadcast": (lambda: _sum_weighted(add(a, b), w), [a, b]),
        "sub": (lambda: _sum_weighted(sub(a, b), w), [a, b]),
        "neg": (lambda: _sum_weighted(neg(a), w), [a]),
        "mul": (lambda: _sum_weighted(mul(a, b), w), [a, b]),
        "sigmoid": (lambda: _sum_weighted(sigmoid(a), w), [a]),
        "tanh": (lambda: _sum_weighted(tanh(a), w), [a]),
        "blend": (lambda: _sum_weighted(blend(mask, tanh(a), mul(a, b)), w), [a, b]),
        "getitem": (lambda: sum_squares([mul(a[:, 1:3], 2.0)]), [a]),
        "getitem_fancy": (lambda: sum_squares([a[np.array([0, 2, 2])]]), [a]),
        "reshape": (lambda: sum_squares([mul(reshape(a, (2, 6)), w26)]), [a]),
        "stack": (lambda: _sum_weighted(stack([tanh(a[0]), a[1], a[2]]), w), [a]),
        "linear": (lambda: sum_squares([linear(a, lin_w)]), [a, lin_w]),
        "conv": (lambda: sum_squares([tanh(conv1d_same(x3, k, bias))]), [x3, k, bias]),
        "maxpool": (lambda: sum_squares([maxpool1d(x3, 2, 2)]), [x3]),
        "l2norm": (lambda: _sum_weighted(l2_normalize(a), w), [a]),
        "scale": (lambda: scale(sum_squares([a]), 0.7), [a]),
        "nll": (lambda: masked_nll(logits, targets, nll_mask), [logits]),
    }
    fn, params = builders[name]
    assert max_rel_error(fn, params) < 1e-6


def test_l2_gradient_is_exact():
    w = _p(4, 3)
    lam = 0.5
    backward(scale(sum_squares([w]), lam))
    np.testing.assert_array_equal(w.grad, 2 * lam * w.data)


def test_nonfinite_is_fatal():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])
    big = parameter([1e308])
    with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
        mul(big, 10.0)


def test_no_grad_builds_no_graph():
    a = _p(2)
    with no_grad():
        out = tanh(a)
    assert not out.requires_grad and out._parents == ()


def test_softmax_rows_sum_to_one():
    z = RNG.normal(size=(50, 5)) * 30
    assert np.abs(softmax(z).sum(axis=1) - 1).max() < 1e-12


def test_saturated_correct_prediction_has_tiny_gradient():
    logits = parameter(np.array([[40.0, 0, 0, 0, 0]]))
    backward(masked_nll(logits, np.array([0]), np.array([True])))
    assert np.abs(logits.grad).max() < 1e-15


# --- dropout, pooling, init -------------------------------------------------

def test_dropout_modes():
    x = _p(1000)
    assert dropout(x, 0.5, None, training=False) is x
    y = dropout(x, 0.5, np.random.default_rng(1), training=True)
    kept = y.data != 0
    np.testing.assert_allclose(y.data[kept], 2 * x.data[kept])
    assert 400 < kept.sum() < 600
    for bad in (-0.1, 1.0):
        with pytest.raises(ValueError):
            dropout(x, bad, None, training=False)


def test_maxpool_example():
    out = maxpool1d(Tensor(np.array([1.0, 3, 2, 0, 5, 4])), 2, 2)
    assert out.data.tolist() == [3, 2, 5]
    assert maxpool1d(Tensor(np.arange(65.0)), 2, 2).shape == (32,)


@pytest.mark.parametrize("shape,fans", [((40, 60), (60, 40)), ((12, 3, 5), (15, 60))])
def test_xavier_variance(shape, fans):
    rng = np.random.default_rng(3)
    draws = np.concatenate([xavier_uniform(shape, rng).ravel() for _ in range(100_000 // math.prod(shape) + 1)])
    want = 2.0 / sum(fans)
    assert abs(draws.var() / want - 1) < 0.05


# --- cells -------------------------------------------------------------------

def test_lstm_zero_weights():
    p = LSTMCellParams.zeros(4, 3)
    h, c = lstm_step(p, Tensor(RNG.normal(size=(2, 4))), Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    assert not h.data.any() and not c.data.any()


def test_lstm_scalar_hand_case():
    wx = {"i": 0.5, "f": -0.3, "c": 0.8, "o": 1.1}
    wh = {"i": 0.2, "f": 0.4, "c": -0.6, "o": 0.1}
    bb = {"i": 0.1, "f": 1.0, "c": 0.0, "o": -0.2}
    gates = ("i", "f", "c", "o")
    p = LSTMCellParams(parameter(np.array([[wx[g]] for g in gates])),
                       parameter(np.array([[wh[g]] for g in gates])),
                       parameter(np.array([bb[g] for g in gates])))
    x, h0, c0 = 0.7, -0.4, 0.9
    sig = lambda z: 1 / (1 + math.exp(-z))
    i = sig(wx["i"] * x + wh["i"] * h0 + bb["i"])
    f = sig(wx["f"] * x + wh["f"] * h0 + bb["f"])
    g = math.tanh(wx["c"] * x + wh["c"] * h0 + bb["c"])
    o = sig(wx["o"] * x + wh["o"] * h0 + bb["o"])
    c1 = f * c0 + i * g
    h1 = o * math.tanh(c1)
    h, c = lstm_step(p, Tensor([[x]]), Tensor([[h0]]), Tensor([[c0]]))
    assert abs(h.data[0, 0] - h1) < 1e-14 and abs(c.data[0, 0] - c1) < 1e-14


def test_lstm_saturated_memory():
    p = LSTMCellParams.init(3, 2, np.random.default_rng(0))
    p.b.data[2:4] = 30.0      # forget gate
    p.b.data[0:2] = -30.0     # input gate
    c0 = Tensor(np.array([[0.3, -0.8]]))
    _, c = lstm_step(p, Tensor(np.full((1, 3), 0.01)), Tensor(np.zeros((1, 2))), c0)
    assert np.abs(c.data - c0.data).max() < 1e-9


def test_lstm_shape_errors():
    p = LSTMCellParams.zeros(4, 3)
    with pytest.raises(ValueError):
        lstm_step(p, Tensor(np.zeros((1, 5))), Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 3))))
    q = ConvLSTMCellParams.zeros(2, 3, 3)
    with pytest.raises(ValueError):
        convlstm_step(q, Tensor(np.zeros((1, 1, 8))), Tensor(np.zeros((1, 3, 8))), Tensor(np.zeros((1, 3, 8))))


def test_convlstm_zero_weights():
    q = ConvLSTMCellParams.zeros(1, 3, 3)
    h, c = convlstm_step(q, Tensor(RNG.random((2, 1, 9))), Tensor(np.zeros((2, 3, 9))), Tensor(np.zeros((2, 3, 9))))
    assert not h.data.any() and not c.data.any()


def test_convlstm_k1_equals_lstm():
    lstm = LSTMCellParams.init(1, 1, np.random.default_rng(5))
    lstm.b.data[:] = [0.1, -0.2, 0.3, 0.05]
    conv = ConvLSTMCellParams(parameter(lstm.w_x.data.reshape(4, 1, 1)),
                              parameter(lstm.w_h.data.reshape(4, 1, 1)), parameter(lstm.b.data.copy()))
    h, c = Tensor([[0.2]]), Tensor([[-0.5]])
    H, C = Tensor([[[0.2]]]), Tensor([[[-0.5]]])
    for x in (0.9, 0.1, 0.4):
        h, c = lstm_step(lstm, Tensor([[x]]), h, c)
        H, C = convlstm_step(conv, Tensor([[[x]]]), H, C)
        assert abs(h.data[0, 0] - H.data[0, 0, 0]) < 1e-12
        assert abs(c.data[0, 0] - C.data[0, 0, 0]) < 1e-12


def test_convlstm_shift_equivariance():
    q = ConvLSTMCellParams.init(1, 2, 3, np.random.default_rng(2))
    x = np.zeros((1, 1, 20))
    x[0, 0, 5:9] = [0.3, 0.9, 0.1, 0.6]
    z = Tensor(np.zeros((1, 2, 20)))
    h1, _ = convlstm_step(q, Tensor(x), z, z)
    h2, _ = convlstm_step(q, Tensor(np.roll(x, 4, axis=-1)), z, z)
    # pads contribute the same zeros on interior positions
    np.testing.assert_allclose(np.roll(h1.data, 4, axis=-1)[..., 2:18], h2.data[..., 2:18], atol=1e-14)


def test_cell_gradients_through_time():
    p = LSTMCellParams.init(3, 2, np.random.default_rng(1))
    q = ConvLSTMCellParams.init(1, 2, 3, np.random.default_rng(2))
    xs = RNG.random((4, 2, 3))

    def loss():
        h = Tensor(np.zeros((2, 2)))
        c = Tensor(np.zeros((2, 2)))
        H = Tensor(np.zeros((2, 2, 3)))
        C = Tensor(np.zeros((2, 2, 3)))
        for t in range(4):
            h, c = lstm_step(p, Tensor(xs[t]), h, c)
            H, C = convlstm_step(q, Tensor(xs[t][:, None, :]), H, C)
        return add(sum_squares([h]), sum_squares([H]))

    assert max_rel_error(loss, list(p.tensors()) + list(q.tensors())) < 1e-6


# --- Adam -------------------------------------------------------------------

@pytest.mark.parametrize("g_scale", [1e-4, 1.0, 1e4])
def test_adam_first_step_is_scale_free(g_scale):
    p = np.zeros(3)
    g = np.array([1.0, -2.0, 0.5]) * g_scale
    (new,) = adam_update([p], [g], AdamState.zeros_like([p]), lr=1e-3)
    np.testing.assert_allclose(new, -1e-3 * np.sign(g), rtol=1e-3)


def test_adam_zero_gradient():
    p = RNG.normal(size=4)
    (new,) = adam_update([p], [np.zeros(4)], AdamState.zeros_like([p]))
    np.testing.assert_array_equal(new, p)


def test_adam_quadratic_convergence():
    target = np.array([0.3, -0.2])
    w = parameter(np.zeros(2))
    opt = Adam([w], lr=0.01)
    for _ in range(200):
        opt.zero_grad()
        backward(sum_squares([sub(w, Tensor(target))]))
        opt.step()
    assert np.abs(w.data - target).max() < 1e-3


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 100), st.integers(0, 1000))
def test_l2_normalize_is_scale_free(c, seed):
    v = np.random.default_rng(seed).normal(size=(3, 6))
    a = l2_normalize(Tensor(v)).data
    b = l2_normalize(Tensor(v * c)).data
    assert np.abs(a - b).max() < 1e-9
