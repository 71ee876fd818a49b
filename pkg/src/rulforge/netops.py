"""Array-level neural network operations with exact gradients.

Everything here is a pure function on numpy arrays, batched over a
leading axis. Convolutional tensors are laid out (batch, height, width,
channels); kernels are (k_h, k_w, in_channels, filters).

Convolution is valid (no padding), cross-correlation (no kernel flip),
with a shared dilation d on both axes:

    out[b,i,j,f] = sum_{p,q,c} x[b, i + d*p, j + d*q, c] * k[p,q,c,f] + bias[f]

so the output spatial dims are (H - d*(k_h-1), W - d*(k_w-1)). Pooling
is 2x1 max with stride 2 on the height axis, dropping a trailing odd
row. Backward functions consume the upstream gradient and return exact
gradients for every input, matching central differences to roundoff.
"""

from __future__ import annotations

import numpy as np

LEAKY_SLOPE = 0.01


def conv_output_dims(h: int, w: int, k_h: int, k_w: int, dilation: int) -> tuple[int, int]:
    """Spatial output dims of a valid dilated convolution; may be <= 0."""
    return h - dilation * (k_h - 1), w - dilation * (k_w - 1)


def _dilated_windows(x: np.ndarray, k_h: int, k_w: int, d: int) -> np.ndarray:
    """View of x with shape (B, Ho, Wo, k_h, k_w, C); no copy."""
    b, h, w, c = x.shape
    ho, wo = conv_output_dims(h, w, k_h, k_w, d)
    sb, sh, sw, sc = x.strides
    return np.lib.stride_tricks.as_strided(
        x,
        shape=(b, ho, wo, k_h, k_w, c),
        strides=(sb, sh, sw, d * sh, d * sw, sc),
        writeable=False,
    )


def conv2d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, dilation: int) -> np.ndarray:
    """Valid dilated cross-correlation plus per-filter bias."""
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    k_h, k_w, c_in, _ = kernel.shape
    b, h, w, c = x.shape
    if c != c_in:
        raise ValueError(f"input has {c} channels, kernel expects {c_in}")
    ho, wo = conv_output_dims(h, w, k_h, k_w, dilation)
    if ho < 1 or wo < 1:
        raise ValueError(
            f"kernel {k_h}x{k_w} at dilation {dilation} does not fit input {h}x{w}"
        )
    windows = _dilated_windows(x, k_h, k_w, dilation)
    return np.einsum("bijpqc,pqcf->bijf", windows, kernel, optimize=True) + bias


def conv2d_backward(
    x: np.ndarray, kernel: np.ndarray, dilation: int, dout: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dkernel, dbias) of a conv2d_forward call."""
    k_h, k_w, _, _ = kernel.shape
    _, ho, wo, _ = dout.shape
    windows = _dilated_windows(x, k_h, k_w, dilation)
    dkernel = np.einsum("bijpqc,bijf->pqcf", windows, dout, optimize=True)
    dbias = dout.sum(axis=(0, 1, 2))
    dx = np.zeros_like(x)
    # Scatter-add per kernel tap; windows overlap in x, so no strided trick.
    for p in range(k_h):
        for q in range(k_w):
            dx[:, p * dilation : p * dilation + ho, q * dilation : q * dilation + wo, :] += (
                np.einsum("bijf,cf->bijc", dout, kernel[p, q], optimize=True)
            )
    return dx, dkernel, dbias


def maxpool_2x1_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping 2x1 max pool on the height axis.

    Returns (out, argmax) where argmax in {0, 1} records which of the two
    pooled rows won (first on ties) and is consumed by the backward pass.
    A trailing odd row is dropped.
    """
    b, h, w, c = x.shape
    ho = h // 2
    if ho < 1:
        raise ValueError(f"cannot 2x1-pool height {h}")
    pairs = x[:, : 2 * ho].reshape(b, ho, 2, w, c)
    argmax = pairs.argmax(axis=2)
    out = np.take_along_axis(pairs, argmax[:, :, None, :, :], axis=2)[:, :, 0]
    return out, argmax


def maxpool_2x1_backward(dout: np.ndarray, argmax: np.ndarray, in_shape: tuple) -> np.ndarray:
    """Route pooled gradients back to the winning rows."""
    b, h, w, c = in_shape
    ho = h // 2
    dpairs = np.zeros((b, ho, 2, w, c), dtype=np.float64)
    np.put_along_axis(dpairs, argmax[:, :, None, :, :], dout[:, :, None, :, :], axis=2)
    dx = np.zeros(in_shape, dtype=np.float64)
    dx[:, : 2 * ho] = dpairs.reshape(b, 2 * ho, w, c)
    return dx


def dense_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map of (B, K) inputs through a (K, U) weight matrix."""
    return x @ weight + bias


def dense_backward(
    x: np.ndarray, weight: np.ndarray, dout: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    dweight = x.T @ dout
    dbias = dout.sum(axis=0)
    dx = dout @ weight.T
    return dx, dweight, dbias


# ---------------------------------------------------------------------------
# Activations. Each entry maps a name to (forward, grad) where grad takes
# the pre-activation x and the output y and returns dy/dx elementwise.


def _tanh_grad(x, y):
    return 1.0 - y * y


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(x, y):
    return (x > 0).astype(np.float64)


def _leaky_relu(x):
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def _leaky_relu_grad(x, y):
    return np.where(x > 0, 1.0, LEAKY_SLOPE)


def _identity(x):
    return x


def _identity_grad(x, y):
    return np.ones_like(x)


ACTIVATIONS = {
    "tanh": (np.tanh, _tanh_grad),
    "relu": (_relu, _relu_grad),
    "leaky_relu": (_leaky_relu, _leaky_relu_grad),
    "identity": (_identity, _identity_grad),
}


def activation_forward(name: str, x: np.ndarray) -> np.ndarray:
    try:
        fwd, _ = ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None
    return fwd(x)


def activation_backward(name: str, x: np.ndarray, y: np.ndarray, dout: np.ndarray) -> np.ndarray:
    _, grad = ACTIVATIONS[name]
    return dout * grad(x, y)


# ---------------------------------------------------------------------------
# Dropout (inverted scaling: evaluation is the identity).


def dropout_mask(shape, drop_prob: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability drop_prob, else 1/(1-p)."""
    if not 0.0 <= drop_prob < 1.0:
        raise ValueError(f"drop_prob must lie in [0, 1), got {drop_prob}")
    if drop_prob == 0.0:
        return np.ones(shape, dtype=np.float64)
    keep = rng.random(shape) >= drop_prob
    return keep.astype(np.float64) / (1.0 - drop_prob)


# ---------------------------------------------------------------------------
# RMSE loss and weight penalties.


def rmse_loss_grad(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """RMSE over a batch and its gradient with respect to predictions.

    d(loss)/d(pred_i) = (pred_i - target_i) / (B * loss); defined as 0 at
    a perfect fit, where the true gradient does not exist.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} disagrees with target {target.shape}")
    err = pred - target
    loss = float(np.sqrt(np.mean(err * err)))
    if loss == 0.0:
        return 0.0, np.zeros_like(pred)
    return loss, err / (err.shape[0] * loss)


def penalty_value(arrays: dict, l1: float, l2: float) -> float:
    """l1 * sum|w| + l2 * sum w^2 over the given weight arrays."""
    total = 0.0
    for w in arrays.values():
        if l1:
            total += l1 * float(np.abs(w).sum())
        if l2:
            total += l2 * float((w * w).sum())
    return total


def penalty_grad(w: np.ndarray, l1: float, l2: float) -> np.ndarray:
    """Subgradient of the penalty for one weight array; sign(0) taken as 0."""
    g = np.zeros_like(w)
    if l1:
        g += l1 * np.sign(w)
    if l2:
        g += 2.0 * l2 * w
    return g
