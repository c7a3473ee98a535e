import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from invlab import nncore as nn
from invlab.nncore import Mode

from conftest import numeric_grad, rel_error


def check_layer(forward, backward, inputs, rng, tol=1e-6):
    """Compare the analytic gradient of sum(out * R) to finite differences for every input."""
    out, cache = forward(*inputs)
    r = rng.standard_normal(out.shape)
    analytic = backward(r, cache)
    if not isinstance(analytic, tuple):
        analytic = (analytic,)

    def loss():
        return float(np.sum(forward(*inputs)[0] * r))

    for x, g in zip(inputs, analytic):
        assert g.shape == x.shape
        assert rel_error(g, numeric_grad(loss, x)) < tol


# --- temporal convolution ----------------------------------------------------

def test_conv_box_filter():
    x = np.ones((1, 1, 1, 5))
    w = np.ones((1, 1, 3))
    out, _ = nn.conv2d_temporal_forward(x, w)
    np.testing.assert_array_equal(out.ravel(), [2, 3, 3, 3, 2])


def test_conv_shape_and_count():
    x = np.zeros((2, 1, 14, 100), dtype=np.float32)
    w = np.zeros((8, 1, 75), dtype=np.float32)
    out, _ = nn.conv2d_temporal_forward(x, w)
    assert out.shape == (2, 8, 14, 100)
    assert w.size == 600
    assert out.dtype == np.float32


def test_conv_even_kernel_padding_split():
    assert nn.same_padding(16) == (7, 8)
    assert nn.same_padding(75) == (37, 37)
    # delta at kernel index 7 (the left pad) is the identity for K=16
    x = np.arange(10.0).reshape(1, 1, 1, 10)
    w = np.zeros((1, 1, 16))
    w[0, 0, 7] = 1
    np.testing.assert_array_equal(nn.conv2d_temporal_forward(x, w)[0], x)


def test_conv_shape_error_names_shapes():
    with pytest.raises(nn.ShapeError, match=r"\(2, 3, 3\).*\(1, 1, 2, 8\)"):
        nn.conv2d_temporal_forward(np.zeros((1, 1, 2, 8)), np.zeros((2, 3, 3)))


@pytest.mark.parametrize("k", [3, 4])
def test_conv_gradients(rng, k):
    x = rng.standard_normal((1, 1, 2, 8))
    w = rng.standard_normal((2, 1, k))
    check_layer(nn.conv2d_temporal_forward, nn.conv2d_temporal_backward, (x, w), rng)


def test_conv_gradients_multi_input_maps(rng):
    x = rng.standard_normal((2, 3, 2, 7))
    w = rng.standard_normal((2, 3, 5))
    check_layer(nn.conv2d_temporal_forward, nn.conv2d_temporal_backward, (x, w), rng)


# --- depthwise ---------------------------------------------------------------

def test_depthwise_shape():
    out, _ = nn.depthwise_conv2d_forward(np.zeros((3, 8, 14, 100)), np.zeros((8, 2, 14, 1)))
    assert out.shape == (3, 16, 1, 100)
    assert np.zeros((8, 2, 14, 1)).size == 224


def test_depthwise_summation_filter():
    a, b = 1.5, -4.0
    x = np.array([a, b]).reshape(1, 1, 2, 1)
    out, _ = nn.depthwise_conv2d_forward(x, np.ones((1, 1, 2, 1)))
    assert out.shape == (1, 1, 1, 1)
    assert out.item() == a + b


def test_depthwise_output_map_order():
    x = np.zeros((1, 2, 1, 1))
    x[0, 1] = 1.0
    w = np.arange(4.0).reshape(2, 2, 1, 1)  # map f, multiplier d -> output f*D + d
    out, _ = nn.depthwise_conv2d_forward(x, w)
    np.testing.assert_array_equal(out.ravel(), [0, 0, 2, 3])


def test_depthwise_height_mismatch():
    with pytest.raises(nn.ShapeError, match="kernel height"):
        nn.depthwise_conv2d_forward(np.zeros((1, 8, 14, 10)), np.zeros((8, 2, 13, 1)))


def test_depthwise_gradients(rng):
    x = rng.standard_normal((2, 2, 3, 4))
    w = rng.standard_normal((2, 2, 3, 1))
    check_layer(nn.depthwise_conv2d_forward, nn.depthwise_conv2d_backward, (x, w), rng)


# --- separable ---------------------------------------------------------------

def test_separable_shape_and_count():
    dw, pw = np.zeros((16, 1, 16)), np.zeros((16, 16))
    out, _ = nn.separable_conv2d_forward(np.zeros((2, 16, 1, 25)), dw, pw)
    assert out.shape == (2, 16, 1, 25)
    assert dw.size + pw.size == 512


def test_separable_identity(rng):
    x = rng.standard_normal((2, 4, 1, 9))
    dw = np.zeros((4, 1, 5))
    dw[:, 0, 2] = 1
    out, _ = nn.separable_conv2d_forward(x, dw, np.eye(4))
    np.testing.assert_array_equal(out, x)


def test_separable_pointwise_mismatch():
    with pytest.raises(nn.ShapeError, match="pointwise"):
        nn.separable_conv2d_forward(np.zeros((1, 4, 1, 9)), np.zeros((4, 1, 3)), np.zeros((4, 5)))


@pytest.mark.parametrize("k", [3, 4])
def test_separable_gradients(rng, k):
    x = rng.standard_normal((2, 3, 1, 6))
    dw = rng.standard_normal((3, 1, k))
    pw = rng.standard_normal((4, 3))
    check_layer(nn.separable_conv2d_forward, nn.separable_conv2d_backward, (x, dw, pw), rng)


# --- batch norm --------------------------------------------------------------

def _bn_state(n, dtype=np.float64):
    return {"mean": np.zeros(n, dtype=dtype), "var": np.ones(n, dtype=dtype)}


def test_batchnorm_normalizes(rng):
    x = 3.0 + 2.0 * rng.standard_normal((16, 8, 14, 10))
    out, _ = nn.batchnorm_forward(x, np.ones(8), np.zeros(8), _bn_state(8), Mode.TRAIN)
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-10)
    var = x.var(axis=(0, 2, 3))
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), var / (var + nn.BN_EPS), rtol=1e-10)


def test_batchnorm_running_average(rng):
    x = rng.standard_normal((4, 2, 1, 5))
    state = _bn_state(2)
    nn.batchnorm_forward(x, np.ones(2), np.zeros(2), state, Mode.TRAIN)
    np.testing.assert_allclose(state["mean"], 0.01 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(state["var"], 0.99 + 0.01 * x.var(axis=(0, 2, 3)))


def test_batchnorm_train_requires_two(rng):
    with pytest.raises(ValueError, match="batch size"):
        nn.batchnorm_forward(np.zeros((1, 2, 1, 4)), np.ones(2), np.zeros(2), _bn_state(2), Mode.TRAIN)


def test_batchnorm_infer_is_pure(rng):
    x = rng.standard_normal((3, 2, 1, 4))
    state = {"mean": np.array([0.5, -1.0]), "var": np.array([2.0, 0.25])}
    before = {k: v.copy() for k, v in state.items()}
    a, _ = nn.batchnorm_forward(x, np.ones(2), np.zeros(2), state, Mode.INFER)
    b, _ = nn.batchnorm_forward(x, np.ones(2), np.zeros(2), state, Mode.INFER)
    np.testing.assert_array_equal(a, b)
    for k in state:
        np.testing.assert_array_equal(state[k], before[k])


@pytest.mark.parametrize("mode", [Mode.TRAIN, Mode.INFER])
def test_batchnorm_gradients(rng, mode):
    x = rng.standard_normal((3, 2, 2, 3))
    gamma = 1 + rng.standard_normal(2) * 0.3
    beta = rng.standard_normal(2)
    state = {"mean": rng.standard_normal(2), "var": 1 + rng.random(2)}

    def fwd(x, gamma, beta):
        return nn.batchnorm_forward(x, gamma, beta, state, mode, update_state=False)

    check_layer(fwd, nn.batchnorm_backward, (x, gamma, beta), rng, tol=1e-5)


# --- elementwise, pooling, dropout ------------------------------------------

def test_elu_values():
    out, _ = nn.elu_forward(np.array([0.0, 1.0, -1.0]))
    assert out[0] == 0 and out[1] == 1
    assert out[2] == pytest.approx(math.exp(-1) - 1, abs=1e-12)
    assert out[2] == pytest.approx(-0.63212, abs=1e-5)


def test_elu_gradients(rng):
    x = rng.standard_normal((3, 7))
    x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink
    check_layer(nn.elu_forward, nn.elu_backward, (x,), rng)


def test_avg_pool_values():
    out, _ = nn.avg_pool_forward(np.array([1.0, 2, 3, 4]), 4)
    np.testing.assert_array_equal(out, [2.5])
    out, _ = nn.avg_pool_forward(np.array([1.0, 2, 3, 4, 5]), 2)
    np.testing.assert_array_equal(out, [1.5, 3.5])


def test_avg_pool_shapes():
    out, _ = nn.avg_pool_forward(np.zeros((2, 16, 1, 100)), 4)
    assert out.shape == (2, 16, 1, 25)
    out, _ = nn.avg_pool_forward(out, 8)
    assert out.shape == (2, 16, 1, 3)


def test_avg_pool_bad_window():
    with pytest.raises(ValueError):
        nn.avg_pool_forward(np.zeros(4), 0)


def test_avg_pool_gradients(rng):
    x = rng.standard_normal((2, 3, 1, 11))
    check_layer(lambda x: nn.avg_pool_forward(x, 4), nn.avg_pool_backward, (x,), rng)


def test_dropout_infer_and_zero_rate(rng):
    x = rng.standard_normal((5, 5))
    state = rng.bit_generator.state
    out, mask = nn.dropout_forward(x, 0.5, Mode.INFER, rng)
    assert out is x and mask is None
    assert rng.bit_generator.state == state  # no RNG consumption in infer mode
    out, _ = nn.dropout_forward(x, 0.0, Mode.TRAIN, rng)
    np.testing.assert_array_equal(out, x)


def test_dropout_statistics():
    x = np.ones(10_000)
    out, mask = nn.dropout_forward(x, 0.5, Mode.TRAIN, np.random.default_rng(7))
    assert 0.95 <= out.mean() <= 1.05
    assert 0.47 <= np.mean(out == 0) <= 0.53
    np.testing.assert_array_equal(nn.dropout_backward(np.ones_like(x), mask), out)


@pytest.mark.parametrize("p", [-0.1, 1.0])
def test_dropout_bad_rate(p):
    with pytest.raises(ValueError):
        nn.dropout_forward(np.ones(3), p, Mode.TRAIN, np.random.default_rng(0))


def test_dropout_deterministic_given_rng_state():
    x = np.ones((4, 6))
    a, _ = nn.dropout_forward(x, 0.5, Mode.TRAIN, np.random.default_rng(3))
    b, _ = nn.dropout_forward(x, 0.5, Mode.TRAIN, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)


# --- dense and loss ----------------------------------------------------------

def test_dense_counts_and_identity(rng):
    assert np.zeros((48, 3)).size + 3 == 147
    assert np.zeros((48, 2)).size + 2 == 98
    x = rng.standard_normal((4, 5))
    out, _ = nn.dense_forward(x, np.eye(5), np.zeros(5))
    np.testing.assert_array_equal(out, x)


def test_dense_mismatch():
    with pytest.raises(nn.ShapeError):
        nn.dense_forward(np.zeros((2, 4)), np.zeros((5, 3)), np.zeros(3))


def test_dense_gradients(rng):
    x, w, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2)), rng.standard_normal(2)
    check_layer(nn.dense_forward, nn.dense_backward, (x, w, b), rng)


def test_cross_entropy_uniform():
    for k in range(3):
        loss, probs, _ = nn.softmax_cross_entropy(np.zeros((1, 3)), nn.one_hot([k], 3, np.float64))
        np.testing.assert_allclose(probs, 1 / 3)
        assert loss == pytest.approx(math.log(3), abs=1e-12)
        assert loss == pytest.approx(1.0986, abs=1e-4)


def test_cross_entropy_saturated_is_stable():
    with np.errstate(over="raise", invalid="raise"):
        loss, probs, grad = nn.softmax_cross_entropy(np.array([[1000.0, 0, 0]]),
                                                     nn.one_hot([0], 3, np.float64))
    assert loss == pytest.approx(0, abs=1e-12)
    assert np.all(np.isfinite(probs)) and np.all(np.isfinite(grad))


def test_cross_entropy_closed_form():
    loss, _, _ = nn.softmax_cross_entropy(np.array([[1.0, 2, 3]]), nn.one_hot([2], 3, np.float64))
    assert loss == pytest.approx(math.log(1 + math.exp(-1) + math.exp(-2)), abs=1e-12)
    assert loss == pytest.approx(0.40761, abs=1e-5)


def test_cross_entropy_bad_onehot():
    with pytest.raises(ValueError, match="one-hot"):
        nn.softmax_cross_entropy(np.zeros((1, 3)), np.array([[1.0, 1.0, 0.0]]))


def test_cross_entropy_gradient(rng):
    logits = rng.standard_normal((4, 3))
    onehot = nn.one_hot([0, 2, 1, 2], 3, np.float64)
    _, probs, grad = nn.softmax_cross_entropy(logits, onehot)
    np.testing.assert_allclose(grad, (probs - onehot) / 4)
    num = numeric_grad(lambda: nn.softmax_cross_entropy(logits, onehot)[0], logits)
    assert rel_error(grad, num) < 1e-6


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-50, 50)),
       st.floats(-100, 100), st.integers(0, 3))
def test_softmax_shift_invariance(logits, c, k):
    onehot = nn.one_hot([k] * 3, 4, np.float64)
    la, pa, _ = nn.softmax_cross_entropy(logits, onehot)
    lb, pb, _ = nn.softmax_cross_entropy(logits + c, onehot)
    np.testing.assert_allclose(pa.sum(axis=1), 1, atol=1e-6)
    assert abs(la - lb) < 1e-6
    np.testing.assert_allclose(pa, pb, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 30), st.integers(1, 20))
def test_same_padding_preserves_length(b, c, t, k):
    x = np.ones((b, 1, c, t))
    out, _ = nn.conv2d_temporal_forward(x, np.ones((2, 1, k)))
    assert out.shape == (b, 2, c, t)
    out, _ = nn.separable_conv2d_forward(np.ones((b, 2, 1, t)), np.ones((2, 1, k)), np.ones((3, 2)))
    assert out.shape == (b, 3, 1, t)
