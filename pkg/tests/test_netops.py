import numpy as np
import pytest

from rulforge.netops import (
    ACTIVATIONS,
    LEAKY_SLOPE,
    activation_backward,
    activation_forward,
    conv2d_backward,
    conv2d_forward,
    conv_output_dims,
    dense_backward,
    dense_forward,
    dropout_mask,
    maxpool_2x1_backward,
    maxpool_2x1_forward,
    penalty_grad,
    penalty_value,
    rmse_loss_grad,
)


def conv_loop_oracle(x, kernel, bias, d):
    """Plain quadruple-loop reference for the strided implementation."""
    b, h, w, c = x.shape
    kh, kw, _, f = kernel.shape
    ho, wo = h - d * (kh - 1), w - d * (kw - 1)
    out = np.zeros((b, ho, wo, f))
    for i in range(ho):
        for j in range(wo):
            for p in range(kh):
                for q in range(kw):
                    patch = x[:, i + d * p, j + d * q, :]
                    out[:, i, j, :] += patch @ kernel[p, q]
    return out + bias


def test_conv_output_dims():
    assert conv_output_dims(30, 20, 3, 3, 1) == (28, 18)
    assert conv_output_dims(30, 20, 10, 1, 3) == (3, 20)


def test_conv_matches_oracle(rng):
    x = rng.normal(size=(2, 12, 9, 3))
    k = rng.normal(size=(3, 2, 3, 4))
    b = rng.normal(size=4)
    for d in (1, 2, 4):
        got = conv2d_forward(x, k, b, d)
        want = conv_loop_oracle(x, k, b, d)
        assert got.shape == (2, 12 - d * 2, 9 - d, 4)
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_conv_rejects_bad_geometry(rng):
    x = rng.normal(size=(1, 5, 5, 2))
    k = rng.normal(size=(3, 3, 2, 1))
    with pytest.raises(ValueError):
        conv2d_forward(x, k, np.zeros(1), dilation=3)  # 5 - 3*2 < 1
    with pytest.raises(ValueError):
        conv2d_forward(x, rng.normal(size=(3, 3, 4, 1)), np.zeros(1), 1)


def test_conv_backward_numeric(rng):
    x = rng.normal(size=(2, 6, 5, 2))
    k = rng.normal(size=(3, 2, 2, 3))
    b = rng.normal(size=3)
    d = 2
    dout = rng.normal(size=conv2d_forward(x, k, b, d).shape)

    dx, dk, db = conv2d_backward(x, k, d, dout)
    h = 1e-6
    for arr, grad in ((x, dx), (k, dk), (b, db)):
        flat = arr.reshape(-1)
        for idx in rng.choice(flat.size, size=min(5, flat.size), replace=False):
            orig = flat[idx]
            flat[idx] = orig + h
            up = np.sum(conv2d_forward(x, k, b, d) * dout)
            flat[idx] = orig - h
            down = np.sum(conv2d_forward(x, k, b, d) * dout)
            flat[idx] = orig
            numeric = (up - down) / (2 * h)
            assert abs(numeric - grad.reshape(-1)[idx]) < 1e-5


def test_maxpool_halves_height(rng):
    x = rng.normal(size=(3, 8, 5, 2))
    out, argmax = maxpool_2x1_forward(x)
    assert out.shape == (3, 4, 5, 2)
    np.testing.assert_array_equal(out[0, 0], np.maximum(x[0, 0], x[0, 1]))


def test_maxpool_odd_height_drops_last_row(rng):
    x = rng.normal(size=(1, 7, 4, 1))
    out, _ = maxpool_2x1_forward(x)
    assert out.shape == (1, 3, 4, 1)


def test_maxpool_backward_routes_to_argmax():
    x = np.array([[[[1.0]], [[3.0]], [[2.0]], [[2.0]]]])  # (1, 4, 1, 1)
    out, argmax = maxpool_2x1_forward(x)
    dout = np.ones_like(out)
    dx = maxpool_2x1_backward(dout, argmax, x.shape)
    np.testing.assert_array_equal(dx[0, :, 0, 0], [0.0, 1.0, 1.0, 0.0])


def test_dense_backward_numeric(rng):
    x = rng.normal(size=(4, 6))
    w = rng.normal(size=(6, 3))
    b = rng.normal(size=3)
    dout = rng.normal(size=(4, 3))
    dx, dw, db = dense_backward(x, w, dout)
    np.testing.assert_allclose(dx, dout @ w.T, atol=1e-12)
    np.testing.assert_allclose(dw, x.T @ dout, atol=1e-12)
    np.testing.assert_allclose(db, dout.sum(axis=0), atol=1e-12)
    assert dense_forward(x, w, b).shape == (4, 3)


def test_activation_table(rng):
    x = rng.normal(size=(20,))
    assert set(ACTIVATIONS) == {"tanh", "relu", "leaky_relu", "identity"}
    np.testing.assert_allclose(activation_forward("tanh", x), np.tanh(x))
    np.testing.assert_allclose(activation_forward("relu", x), np.maximum(x, 0))
    leaky = activation_forward("leaky_relu", x)
    np.testing.assert_allclose(leaky, np.where(x > 0, x, LEAKY_SLOPE * x))
    np.testing.assert_allclose(activation_forward("identity", x), x)
    with pytest.raises(ValueError):
        activation_forward("swish", x)
    # grads
    dout = rng.normal(size=x.shape)
    y = np.tanh(x)
    np.testing.assert_allclose(activation_backward("tanh", x, y, dout), dout * (1 - y**2))
    y = activation_forward("leaky_relu", x)
    np.testing.assert_allclose(
        activation_backward("leaky_relu", x, y, dout),
        dout * np.where(x > 0, 1.0, LEAKY_SLOPE),
    )


def test_dropout_mask(rng):
    mask = dropout_mask((10000,), 0.3, rng)
    kept = mask > 0
    # inverted scaling keeps the expectation at 1
    np.testing.assert_allclose(mask[kept], 1.0 / 0.7)
    assert abs(kept.mean() - 0.7) < 0.02
    np.testing.assert_array_equal(dropout_mask((5,), 0.0, rng), np.ones(5))
    with pytest.raises(ValueError):
        dropout_mask((5,), 1.0, rng)
    with pytest.raises(ValueError):
        dropout_mask((5,), -0.1, rng)


def test_rmse_loss_grad(rng):
    pred = rng.normal(size=8)
    target = rng.normal(size=8)
    loss, grad = rmse_loss_grad(pred, target)
    assert np.isclose(loss, np.sqrt(np.mean((pred - target) ** 2)))
    np.testing.assert_allclose(grad, (pred - target) / (8 * loss))
    loss0, grad0 = rmse_loss_grad(target, target)
    assert loss0 == 0.0
    np.testing.assert_array_equal(grad0, np.zeros(8))


def test_penalty_terms():
    w = np.array([[-2.0, 0.0], [3.0, 1.0]])
    assert penalty_value({"w": w}, l1=0.5, l2=0.0) == 0.5 * 6.0
    assert penalty_value({"w": w}, l1=0.0, l2=0.1) == pytest.approx(0.1 * 14.0)
    g = penalty_grad(w, l1=0.5, l2=0.1)
    np.testing.assert_allclose(g, 0.5 * np.sign(w) + 0.2 * w)
    assert g[0, 1] == 0.0  # sign(0) contributes nothing
