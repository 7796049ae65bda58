"""Layer-level behavior: fixed-point cases, shape errors, finite differences."""

import numpy as np
import pytest

from masscast.nn.layers import (
    BatchNorm,
    Conv3x3,
    Linear,
    MaxPool2,
    ReLU,
    ShapeError,
    concat_backward,
    concat_forward,
    mse_loss,
)
from masscast.nn.gradcheck import LAYER_CHECKS, LAYER_TOL, MSE_TOL, run_layer_suite


def _rng(seed=0):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


# ---------------------------------------------------------------------------
# convolution


def test_conv_delta_kernel_is_identity():
    conv = Conv3x3(2, 2, _rng(), dtype=np.float64)
    w = np.zeros((2, 2, 3, 3))
    w[0, 0, 1, 1] = 1.0  # center tap copies channel 0
    w[1, 1, 1, 1] = 1.0
    conv.params["w"] = w
    conv.params["b"] = np.zeros(2)
    x = _rng(3).normal(size=(2, 2, 6, 6))
    np.testing.assert_allclose(conv.forward(x), x, atol=1e-12)


def test_conv_zero_weights_give_bias():
    conv = Conv3x3(3, 4, _rng(), dtype=np.float64)
    conv.params["w"] = np.zeros((4, 3, 3, 3))
    conv.params["b"] = np.arange(4.0)
    x = _rng(1).normal(size=(2, 3, 5, 5))
    out = conv.forward(x)
    for c in range(4):
        np.testing.assert_allclose(out[:, c], float(c), atol=1e-12)


def test_conv_same_padding_shape():
    conv = Conv3x3(3, 8, _rng())
    out = conv.forward(np.zeros((2, 3, 14, 10), dtype=np.float32))
    assert out.shape == (2, 8, 14, 10)


def test_conv_rejects_wrong_channels():
    conv = Conv3x3(3, 8, _rng())
    with pytest.raises(ShapeError):
        conv.forward(np.zeros((2, 4, 8, 8), dtype=np.float32))


def test_conv_init_he_uniform_bounds():
    conv = Conv3x3(16, 32, _rng(7))
    limit = np.sqrt(6.0 / (16 * 9))
    w = conv.params["w"]
    assert w.shape == (32, 16, 3, 3)
    assert np.abs(w).max() <= limit
    assert np.abs(w).max() > 0.8 * limit  # draws actually span the range
    np.testing.assert_array_equal(conv.params["b"], 0.0)


def test_conv_skips_input_grad_when_disabled():
    conv = Conv3x3(3, 4, _rng(), needs_input_grad=False)
    x = _rng(2).normal(size=(2, 3, 6, 6)).astype(np.float32)
    out = conv.forward(x, train=True)
    assert conv.backward(np.ones_like(out)) is None
    assert conv.grads["w"].shape == conv.params["w"].shape


# ---------------------------------------------------------------------------
# max pooling


def test_maxpool_window_values():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    pool = MaxPool2()
    np.testing.assert_array_equal(pool.forward(x), [[[[4.0]]]])


def test_maxpool_tie_routes_to_first_element():
    x = np.full((1, 1, 2, 2), 7.0)
    pool = MaxPool2()
    out = pool.forward(x, train=True)
    np.testing.assert_array_equal(out, [[[[7.0]]]])
    dx = pool.backward(np.ones((1, 1, 1, 1)))
    np.testing.assert_array_equal(
        dx, [[[[1.0, 0.0], [0.0, 0.0]]]]
    )


def test_maxpool_backward_matches_argmax_oracle():
    rng = _rng(11)
    for _ in range(50):
        x = np.round(rng.normal(size=(2, 3, 8, 6)), 1)  # rounding forces ties
        pool = MaxPool2()
        out = pool.forward(x, train=True)
        dout = rng.normal(size=out.shape)
        dx = pool.backward(dout)
        # oracle: route each gradient to the first row-major max of its window
        want = np.zeros_like(x)
        for b in range(2):
            for c in range(3):
                for i in range(4):
                    for j in range(3):
                        win = x[b, c, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2]
                        k = int(np.argmax(win))
                        want[b, c, 2 * i + k // 2, 2 * j + k % 2] += dout[b, c, i, j]
        np.testing.assert_allclose(dx, want)


def test_maxpool_rejects_odd_dims():
    with pytest.raises(ShapeError):
        MaxPool2().forward(np.zeros((1, 1, 5, 4)))


# ---------------------------------------------------------------------------
# batch norm


def test_batchnorm_fixed_point_on_whitened_input():
    # balanced +/-1 columns have exactly zero mean and unit biased variance,
    # so with gamma=1, beta=0 the layer only perturbs by ~eps/2
    rng = _rng(4)
    half = np.ones((32, 8))
    x = np.concatenate([half, -half])
    for c in range(8):
        x[:, c] = x[rng.permutation(64), c]
    bn = BatchNorm(8, spatial=False, dtype=np.float64)
    out = bn.forward(x, train=True)
    assert np.abs(out - x).max() < 1e-5


def test_batchnorm_gamma_zero_outputs_beta():
    bn = BatchNorm(4, spatial=True, dtype=np.float64)
    bn.params["gamma"] = np.zeros(4)
    bn.params["beta"] = np.array([1.0, -2.0, 0.5, 3.0])
    x = _rng(2).normal(size=(3, 4, 5, 5))
    out = bn.forward(x, train=True)
    for c in range(4):
        np.testing.assert_allclose(out[:, c], bn.params["beta"][c], atol=1e-12)


def test_batchnorm_train_output_is_standardized():
    rng = _rng(8)
    x = rng.normal(loc=3.0, scale=2.5, size=(32, 6, 4, 4))
    bn = BatchNorm(6, spatial=True, dtype=np.float64)
    out = bn.forward(x, train=True)
    m = out.mean(axis=(0, 2, 3))
    v = out.var(axis=(0, 2, 3))
    np.testing.assert_allclose(m, 0.0, atol=1e-10)
    np.testing.assert_allclose(v, 1.0, atol=1e-4)  # eps shifts variance slightly


def test_batchnorm_running_stats_update():
    rng = _rng(1)
    x = rng.normal(loc=2.0, size=(16, 3)).astype(np.float64)
    bn = BatchNorm(3, spatial=False, dtype=np.float64)
    bn.forward(x, train=True)
    batch_mean = x.mean(axis=0)
    batch_var = x.var(axis=0)  # biased
    np.testing.assert_allclose(bn.running_mean, 0.1 * batch_mean, atol=1e-12)
    np.testing.assert_allclose(
        bn.running_var, 0.9 * 1.0 + 0.1 * batch_var, atol=1e-12
    )


def test_batchnorm_eval_uses_running_stats():
    bn = BatchNorm(2, spatial=False, dtype=np.float64)
    bn.running_mean = np.array([1.0, -1.0])
    bn.running_var = np.array([4.0, 0.25])
    x = np.array([[3.0, 0.0]])
    out = bn.forward(x, train=False)
    want = np.array([[2.0 / np.sqrt(4.0 + 1e-5), 1.0 / np.sqrt(0.25 + 1e-5)]])
    np.testing.assert_allclose(out, want, rtol=1e-12)


def test_batchnorm_rejects_batch_of_one_in_train():
    bn = BatchNorm(3, spatial=False)
    with pytest.raises(ShapeError):
        bn.forward(np.zeros((1, 3), dtype=np.float32), train=True)
    # eval mode accepts a single row
    bn.forward(np.zeros((1, 3), dtype=np.float32), train=False)


def test_batchnorm_rejects_wrong_feature_count():
    bn = BatchNorm(3, spatial=False)
    with pytest.raises(ShapeError):
        bn.forward(np.zeros((4, 5), dtype=np.float32), train=True)


# ---------------------------------------------------------------------------
# linear / relu / concat / loss


def test_linear_identity():
    lin = Linear(3, 3, _rng(), dtype=np.float64)
    lin.params["w"] = np.eye(3)
    lin.params["b"] = np.zeros(3)
    x = _rng(6).normal(size=(5, 3))
    np.testing.assert_allclose(lin.forward(x), x, atol=1e-12)


def test_linear_bias_and_grads():
    lin = Linear(2, 1, _rng(), dtype=np.float64)
    lin.params["w"] = np.array([[2.0, -1.0]])
    lin.params["b"] = np.array([0.5])
    x = np.array([[1.0, 1.0], [0.0, 2.0]])
    out = lin.forward(x, train=True)
    np.testing.assert_allclose(out, [[1.5], [-1.5]])
    dx = lin.backward(np.ones((2, 1)))
    np.testing.assert_allclose(lin.grads["w"], [[1.0, 3.0]])
    np.testing.assert_allclose(lin.grads["b"], [2.0])
    np.testing.assert_allclose(dx, [[2.0, -1.0], [2.0, -1.0]])


def test_relu_values():
    relu = ReLU()
    x = np.array([[-1.0, 0.0, 2.0]])
    np.testing.assert_array_equal(relu.forward(x), [[0.0, 0.0, 2.0]])


def test_relu_backward_zeroes_negative_side():
    relu = ReLU()
    x = np.array([[-1.0, 0.0, 2.0]])
    relu.forward(x, train=True)
    dx = relu.backward(np.ones_like(x))
    np.testing.assert_array_equal(dx, [[0.0, 0.0, 1.0]])


def test_relu_inplace_matches_copy():
    rng = _rng(3)
    x = rng.normal(size=(4, 7)).astype(np.float32)
    plain = ReLU().forward(x.copy(), train=True)
    inplace = ReLU(inplace=True).forward(x.copy(), train=True)
    np.testing.assert_array_equal(plain, inplace)


def test_concat_and_split():
    f = np.arange(12.0).reshape(2, 6)
    e = np.arange(6.0).reshape(2, 3)
    z = concat_forward(f, e)
    assert z.shape == (2, 9)
    df, de = concat_backward(np.ones_like(z), 6)
    assert df.shape == (2, 6) and de.shape == (2, 3)
    with pytest.raises(ShapeError):
        concat_forward(f, e[:1])


def test_mse_loss_value_and_grad():
    pred = np.array([[1.0], [3.0]])
    target = np.array([[0.0], [1.0]])
    loss, grad = mse_loss(pred, target)
    assert loss == pytest.approx((1.0 + 4.0) / 2.0)
    np.testing.assert_allclose(grad, 2.0 * (pred - target) / 2.0)


# ---------------------------------------------------------------------------
# finite differences


@pytest.mark.parametrize("name", sorted(LAYER_CHECKS))
def test_layer_finite_difference(name):
    errs = [LAYER_CHECKS[name](seed) for seed in range(3)]
    tol = MSE_TOL if name == "mse" else LAYER_TOL
    assert max(errs) < tol


def test_layer_suite_runs_clean():
    res = run_layer_suite(n_seeds=2, seed0=100)
    assert set(res) == set(LAYER_CHECKS)
    for name, err in res.items():
        tol = MSE_TOL if name == "mse" else LAYER_TOL
        assert err < tol, name
