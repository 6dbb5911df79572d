import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import numeric_grad, rel_err
from emdnet.errors import ShapeError
from emdnet.ops import (
    BatchNormState,
    batchnorm2d,
    bilinear_mix,
    concat_channels,
    conv2d,
    conv_transpose2d,
    leaky_relu,
    l1_sum,
    relu,
    sigmoid,
)
from emdnet.tensor import Tape, Tensor, backward

F64 = np.float64


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=F64), requires_grad=grad)


def away_from_zero(rng, shape, margin=1e-2):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * (margin + np.abs(x)), x)


def check_grads(fn, arrays, seed=0, tol=1e-4):
    """Compare tape gradients of sum(fn(*tensors) * R) with central differences."""
    rng = np.random.default_rng(seed)
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out_shape = fn(*tensors).shape
    proj = rng.normal(size=out_shape)

    def loss_value():
        return float((fn(*tensors).data * proj).sum())

    with Tape() as tape:
        loss = (fn(*tensors) * proj).sum()
    grads = backward(loss, tape)
    for t in tensors:
        num = numeric_grad(loss_value, t.data)
        assert rel_err(num, grads[t]) < tol


# conv2d --------------------------------------------------------------------

def test_conv2d_same_padding_shape():
    x = T(np.zeros((1, 1, 80, 80)))
    w = T(np.zeros((64, 1, 5, 5)))
    assert conv2d(x, w, T(np.zeros(64)), 1, 2).shape == (1, 64, 80, 80)


def test_conv2d_stride2_shape():
    x = T(np.zeros((1, 64, 80, 80)))
    w = T(np.zeros((128, 64, 3, 3)))
    assert conv2d(x, w, T(np.zeros(128)), 2, 1).shape == (1, 128, 40, 40)


def test_conv2d_degenerate_1x1():
    out = conv2d(T([[[[1.5]]]]), T([[[[-2.0]]]]), T([0.25]), 1, 0)
    assert out.data.item() == -2.0 * 1.5 + 0.25


def test_conv2d_channel_mismatch_names_shapes():
    with pytest.raises(ShapeError, match=r"\(1, 3, 8, 8\).*\(4, 2, 3, 3\)"):
        conv2d(T(np.zeros((1, 3, 8, 8))), T(np.zeros((4, 2, 3, 3))), None, 1, 1)


def test_conv2d_nonpositive_output_rejected():
    with pytest.raises(ShapeError):
        conv2d(T(np.zeros((1, 1, 2, 2))), T(np.zeros((1, 1, 5, 5))), None, 1, 0)


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(1)
    x, w, b = rng.normal(size=(2, 3, 7, 7)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    out = conv2d(T(x), T(w), T(b), 2, 1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for n in range(2):
        for o in range(4):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    ref[n, o, i, j] = (xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]).sum() + b[o]
    np.testing.assert_allclose(out, ref, atol=1e-12)


@pytest.mark.parametrize("stride,padding,k", [(1, 2, 5), (2, 1, 3), (1, 1, 3)])
def test_conv2d_gradients(stride, padding, k):
    rng = np.random.default_rng(k + stride)
    check_grads(lambda x, w, b: conv2d(x, w, b, stride, padding),
                [rng.normal(size=(2, 3, 6, 6)), rng.normal(size=(2, 3, k, k)), rng.normal(size=2)])


# conv_transpose2d ------------------------------------------------------------

def test_conv_transpose_canonical_shape():
    out = conv_transpose2d(T(np.zeros((1, 8, 2, 2))), T(np.zeros((8, 5, 3, 3))), T(np.zeros(5)), 2, 1, 1)
    assert out.shape == (1, 5, 4, 4)


def test_conv_transpose_same_shape_5x5():
    out = conv_transpose2d(T(np.zeros((1, 2, 80, 80))), T(np.zeros((2, 3, 5, 5))), None, 1, 2, 0)
    assert out.shape == (1, 3, 80, 80)


def test_conv_transpose_1x1_latent_to_2x2():
    out = conv_transpose2d(T(np.zeros((1, 512, 1, 1))), T(np.zeros((512, 4, 3, 3))), None, 2, 1, 1)
    assert out.shape == (1, 4, 2, 2)


def test_conv_transpose_negative_extent_rejected():
    with pytest.raises(ShapeError):
        conv_transpose2d(T(np.zeros((1, 1, 1, 1))), T(np.zeros((1, 1, 1, 1))), None, 1, 2, 0)


@pytest.mark.parametrize("seed", range(5))
def test_conv_adjoint_identity(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 4, 4))
    w = rng.normal(size=(5, 3, 3, 3))
    y_shape = conv2d(T(x), T(w), None, 2, 1).shape
    y = rng.normal(size=y_shape)
    lhs = (conv2d(T(x), T(w), None, 2, 1).data * y).sum()
    rhs = (x * conv_transpose2d(T(y), T(w), None, 2, 1, 1).data).sum()
    assert abs(lhs - rhs) <= 1e-10


@pytest.mark.parametrize("stride,padding,opad", [(2, 1, 1), (2, 1, 0), (1, 2, 0)])
def test_conv_transpose_gradients(stride, padding, opad):
    rng = np.random.default_rng(7)
    k = 5 if stride == 1 else 3
    check_grads(lambda x, w, b: conv_transpose2d(x, w, b, stride, padding, opad),
                [rng.normal(size=(2, 3, 3, 3)), rng.normal(size=(3, 2, k, k)), rng.normal(size=2)])


# batch norm --------------------------------------------------------------------

def test_batchnorm_identity_on_standardized_input():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 3, 5, 5))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    out = batchnorm2d(T(x), T(np.ones(3)), T(np.zeros(3)), None, True).data
    # the only deviation is the 1/sqrt(1 + eps) factor
    np.testing.assert_allclose(out, x / math.sqrt(1 + 1e-5), atol=1e-12)
    assert np.all(np.abs(out - x) <= 0.5e-5 * np.abs(x) + 1e-12)


def test_batchnorm_constant_channel_gives_beta():
    x = np.full((2, 1, 3, 3), 7.0)
    out = batchnorm2d(T(x), T([2.0]), T([0.3]), None, True)
    assert np.all(np.isfinite(out.data))
    np.testing.assert_allclose(out.data, 0.3)


def test_batchnorm_running_stats_and_eval_purity():
    rng = np.random.default_rng(1)
    x = rng.normal(2.0, 3.0, size=(4, 2, 3, 3))
    state = BatchNormState.fresh(2, F64)
    batchnorm2d(T(x), T(np.ones(2)), T(np.zeros(2)), state, True)
    np.testing.assert_allclose(state.mean, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(state.var, 0.9 + 0.1 * x.var(axis=(0, 2, 3)))
    before = state.copy()
    a = batchnorm2d(T(x), T(np.ones(2)), T(np.zeros(2)), state, False).data
    b = batchnorm2d(T(x), T(np.ones(2)), T(np.zeros(2)), state, False).data
    assert a.tobytes() == b.tobytes()
    assert state.mean.tobytes() == before.mean.tobytes()


def test_batchnorm_train_needs_two_values():
    with pytest.raises(ShapeError):
        batchnorm2d(T(np.zeros((1, 2, 1, 1))), T(np.ones(2)), T(np.zeros(2)), None, True)


def test_batchnorm_gradients_train_mode():
    rng = np.random.default_rng(2)
    check_grads(lambda x, g, b: batchnorm2d(x, g, b, None, True),
                [rng.normal(size=(3, 2, 3, 3)), rng.normal(size=2), rng.normal(size=2)])


def test_batchnorm_gradients_eval_mode():
    rng = np.random.default_rng(3)
    state = BatchNormState(rng.normal(size=2), rng.uniform(0.5, 2.0, size=2))
    check_grads(lambda x, g, b: batchnorm2d(x, g, b, state, False),
                [rng.normal(size=(2, 2, 3, 3)), rng.normal(size=2), rng.normal(size=2)])


def test_batchnorm_plain_sum_gradient_vanishes():
    # the normalized output sums to a constant, so d(sum)/dx is zero
    rng = np.random.default_rng(4)
    x = Tensor(rng.normal(size=(2, 2, 3, 3)), requires_grad=True)
    gamma, beta = T(np.ones(2)), T(np.zeros(2))
    with Tape() as tape:
        loss = batchnorm2d(x, gamma, beta, None, True).sum()
    ana = backward(loss, tape)[x]
    num = numeric_grad(lambda: float(batchnorm2d(x, gamma, beta, None, True).data.sum()), x.data)
    assert np.abs(ana).max() < 1e-12 and np.abs(num).max() < 1e-6


# activations ---------------------------------------------------------------------

def test_leaky_relu_values():
    out = leaky_relu(T([2.0, -1.0, 0.0]), 0.2).data
    np.testing.assert_allclose(out, [2.0, -0.2, 0.0])


def test_leaky_relu_subgradient_at_zero_is_slope():
    x = Tensor(np.array([0.0]), requires_grad=True)
    with Tape() as tape:
        loss = leaky_relu(x, 0.2).sum()
    assert backward(loss, tape)[x][0] == pytest.approx(0.2)


def test_relu_values_and_gradients():
    np.testing.assert_array_equal(relu(T([-3.0, 3.0])).data, [0.0, 3.0])
    x = Tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
    with Tape() as tape:
        loss = relu(x).sum()
    np.testing.assert_array_equal(backward(loss, tape)[x], [0.0, 0.0, 1.0])


def test_sigmoid_values():
    assert sigmoid(T([0.0])).data[0] == 0.5
    oracle = 1.0 / (1.0 + math.exp(-10.0))
    assert sigmoid(T([10.0])).data[0] == pytest.approx(oracle, abs=1e-15)
    assert sigmoid(T([10.0])).data[0] == pytest.approx(0.9999546, abs=1e-7)


def test_sigmoid_derivative_at_zero():
    x = Tensor(np.array([0.0]), requires_grad=True)
    with Tape() as tape:
        loss = sigmoid(x).sum()
    assert backward(loss, tape)[x][0] == pytest.approx(0.25)


def test_sigmoid_stays_open_interval_in_float32():
    out = sigmoid(Tensor(np.array([-200.0, -30.0, 30.0, 200.0], dtype=np.float32))).data
    assert np.all(out > 0) and np.all(out < 1)


@pytest.mark.parametrize("op", [lambda x: leaky_relu(x, 0.2), relu, sigmoid])
def test_activation_gradients(op):
    rng = np.random.default_rng(5)
    check_grads(op, [away_from_zero(rng, (3, 4))])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20), st.floats(0, 1))
def test_activation_ranges(values, slope):
    x = np.array(values)
    s = sigmoid(T(x)).data
    assert np.all((s > 0) & (s < 1))
    assert np.all(leaky_relu(T(x), slope).data >= np.minimum(0, slope * x))


# concat --------------------------------------------------------------------------

def test_concat_shapes_and_identity():
    a, b = T(np.zeros((1, 3, 8, 8))), T(np.ones((1, 3, 8, 8)))
    assert concat_channels([a, b]).shape == (1, 6, 8, 8)
    assert concat_channels([a]) is a


def test_concat_spatial_mismatch_rejected():
    with pytest.raises(ShapeError):
        concat_channels([T(np.zeros((1, 3, 8, 8))), T(np.zeros((1, 3, 4, 4)))])


def test_concat_gradients():
    rng = np.random.default_rng(6)
    check_grads(lambda a, b, c: concat_channels([a, b, c]),
                [rng.normal(size=(2, 1, 3, 3)), rng.normal(size=(2, 2, 3, 3)), rng.normal(size=(2, 3, 3, 3))])


# bilinear mixer --------------------------------------------------------------------

def bilinear_oracle(s, w, c):
    n, r = s.shape
    _, k, b = w.shape
    out = np.zeros((n, k))
    for i in range(n):
        for kk in range(k):
            acc = 0.0
            for rr in range(r):
                for bb in range(b):
                    acc += s[i, rr] * w[rr, kk, bb] * c[i, bb]
            out[i, kk] = acc
    return out


def test_bilinear_scalar_case():
    assert bilinear_mix(T([[2.0]]), T([[[3.0]]]), T([[4.0]])).data.item() == 24.0


def test_bilinear_selection_case():
    d = 4
    w = np.zeros((d, d, d))
    for i in range(d):
        w[i, i, i] = 1.0
    c = np.random.default_rng(0).normal(size=(3, d))
    np.testing.assert_array_equal(bilinear_mix(T(np.ones((3, d))), T(w), T(c)).data, c)


@pytest.mark.parametrize("seed", range(3))
def test_bilinear_matches_triple_loop(seed):
    rng = np.random.default_rng(seed)
    s, w, c = rng.normal(size=(2, 3)), rng.normal(size=(3, 3, 3)), rng.normal(size=(2, 3))
    np.testing.assert_allclose(bilinear_mix(T(s), T(w), T(c)).data, bilinear_oracle(s, w, c), atol=1e-12)


def test_bilinear_rectangular_dims():
    rng = np.random.default_rng(9)
    s, w, c = rng.normal(size=(2, 2)), rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 4))
    np.testing.assert_allclose(bilinear_mix(T(s), T(w), T(c)).data, bilinear_oracle(s, w, c), atol=1e-12)


def test_bilinear_dimension_mismatch():
    with pytest.raises(ShapeError):
        bilinear_mix(T(np.zeros((1, 3))), T(np.zeros((2, 3, 3))), T(np.zeros((1, 3))))


def test_bilinear_gradients():
    rng = np.random.default_rng(8)
    check_grads(bilinear_mix, [rng.normal(size=(2, 3)), rng.normal(size=(3, 4, 2)), rng.normal(size=(2, 2))])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_bilinear_linear_in_each_factor(seed, a, b):
    rng = np.random.default_rng(seed)
    s1, s2, w, c = (rng.normal(size=sh) for sh in [(2, 4), (2, 4), (4, 4, 4), (2, 4)])
    lhs = bilinear_mix(T(a * s1 + b * s2), T(w), T(c)).data
    rhs = a * bilinear_mix(T(s1), T(w), T(c)).data + b * bilinear_mix(T(s2), T(w), T(c)).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-12, rtol=0)
    lhs = bilinear_mix(T(c), T(w), T(a * s1 + b * s2)).data
    rhs = a * bilinear_mix(T(c), T(w), T(s1)).data + b * bilinear_mix(T(c), T(w), T(s2)).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-12, rtol=0)


# l1 -------------------------------------------------------------------------------

def test_l1_sum_values():
    assert l1_sum(T([1.0, 2.0]), T([1.0, 2.0])).data == 0.0
    assert l1_sum(T([1.0, 2.0]), T([0.0, 0.0])).data == 3.0


def test_l1_sum_zero_subgradient_at_tie():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with Tape() as tape:
        loss = l1_sum(a, T([1.0, 0.0]))
    np.testing.assert_array_equal(backward(loss, tape)[a], [0.0, 1.0])


def test_l1_sum_gradients_away_from_ties():
    rng = np.random.default_rng(10)
    b = rng.normal(size=(3, 3))
    a = b + away_from_zero(rng, (3, 3))
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    with Tape() as tape:
        loss = l1_sum(ta, tb)
    g = backward(loss, tape)
    num = numeric_grad(lambda: float(l1_sum(ta, tb).data), ta.data)
    assert rel_err(num, g[ta]) < 1e-4
    np.testing.assert_array_equal(g[ta], np.sign(a - b))
    np.testing.assert_array_equal(g[tb], -np.sign(a - b))
