"""Dense-array forward/backward primitives for the compact EEG encoder.

Every layer is a pair of functions. ``*_forward`` returns ``(out, cache)``;
``*_backward(dout, cache)`` returns the input gradient followed by the
parameter gradients, in the order the parameters were passed forward.

All arrays carry a leading batch axis. Activations are laid out as
``(batch, maps, channels, time)``. Functions preserve the dtype of their
inputs, so the same code runs in float32 for training and in float64 for
gradient checks.
"""

from enum import Enum
from functools import lru_cache

import numpy as np

BN_EPS = 1e-3
BN_MOMENTUM = 0.99


class Mode(str, Enum):
    TRAIN = "train"
    INFER = "infer"


class ShapeError(ValueError):
    pass


def same_padding(kernel_size):
    """Left/right zero padding that keeps the temporal length unchanged."""
    left = (kernel_size - 1) // 2
    return left, kernel_size - 1 - left


# ---------------------------------------------------------------------------
# temporal convolution


@lru_cache(maxsize=None)
def _toeplitz_index(length, kernel_size):
    # (s, t, k) triples with s = t + k - left inside [0, T), sorted by k
    left, _ = same_padding(kernel_size)
    t = np.arange(length)[:, None]
    k = np.arange(kernel_size)[None, :]
    s = t + k - left
    valid = (s >= 0) & (s < length)
    order = np.argsort(np.broadcast_to(k, s.shape)[valid], kind="stable")
    s_idx, t_idx = s[valid][order], np.broadcast_to(t, s.shape)[valid][order]
    k_idx = np.broadcast_to(k, s.shape)[valid][order]
    starts = np.searchsorted(k_idx, np.arange(kernel_size))
    return s_idx, t_idx, k_idx, starts


def _banded(w, length):
    # M[i, s, o, t] = w[o, i, s - t + left]
    f_out, f_in, k = w.shape
    s_idx, t_idx, k_idx, _ = _toeplitz_index(length, k)
    m = np.zeros((f_in, length, f_out, length), dtype=w.dtype)
    m[:, s_idx, :, t_idx] = w[:, :, k_idx].transpose(2, 1, 0)
    return m.reshape(f_in * length, f_out * length)


def conv2d_temporal_forward(x, w):
    """Bias-free "same" convolution along time.

    x: (B, F_in, C, T); w: (F_out, F_in, K) -> (B, F_out, C, T).
    Input maps are contracted; each channel row is filtered independently.
    Evaluated as a batched matrix product against the banded (Toeplitz)
    form of the kernels.
    """
    if x.ndim != 4 or w.ndim != 3 or w.shape[1] != x.shape[1]:
        raise ShapeError(
            f"kernel shape {w.shape} incompatible with input shape {x.shape}")
    b, f_in, c, t = x.shape
    f_out = w.shape[0]
    m = _banded(w, t)
    x2 = x.transpose(0, 2, 1, 3).reshape(b * c, f_in * t)
    # (B, 1, C, F_in*T) @ (F_out, F_in*T, T) lands directly in (B, F_out, C, T)
    bands = np.ascontiguousarray(m.reshape(f_in * t, f_out, t).transpose(1, 0, 2))
    out = np.matmul(x2.reshape(b, 1, c, f_in * t), bands)
    return out, (x2, m, w.shape, x.shape)


def conv2d_temporal_backward(dout, cache, need_input_grad=True):
    x2, m, w_shape, x_shape = cache
    b, f_in, c, t = x_shape
    f_out, _, k = w_shape
    d2 = dout.transpose(0, 2, 1, 3).reshape(b * c, f_out * t)
    dm = (x2.T @ d2).reshape(f_in, t, f_out, t)
    s_idx, t_idx, _, starts = _toeplitz_index(t, k)
    per_pair = dm[:, s_idx, :, t_idx]  # (n_valid, F_in, F_out), grouped by k
    dw = np.add.reduceat(per_pair, starts, axis=0).transpose(2, 1, 0)
    if not need_input_grad:
        return None, np.ascontiguousarray(dw)
    dx = (d2 @ m.T).reshape(b, c, f_in, t).transpose(0, 2, 1, 3)
    return np.ascontiguousarray(dx), np.ascontiguousarray(dw)


# ---------------------------------------------------------------------------
# depthwise spatial convolution


def depthwise_conv2d_forward(x, w):
    """Full-height spatial filters applied per input map.

    x: (B, F, C, T); w: (F, D, C, 1) -> (B, F*D, 1, T), output map f*D + d.
    """
    if x.ndim != 4 or w.ndim != 4 or w.shape[0] != x.shape[1] or w.shape[3] != 1:
        raise ShapeError(
            f"kernel shape {w.shape} incompatible with input shape {x.shape}")
    if w.shape[2] != x.shape[2]:
        raise ShapeError(
            f"kernel height {w.shape[2]} must equal input channel extent "
            f"{x.shape[2]} (kernel {w.shape}, input {x.shape})")
    b, f, c, t = x.shape
    d = w.shape[1]
    out = np.matmul(w[None, ..., 0], x)  # (1,F,D,C) @ (B,F,C,T)
    return out.reshape(b, f * d, 1, t), (x, w)


def depthwise_conv2d_backward(dout, cache):
    x, w = cache
    b, f, c, t = x.shape
    d = w.shape[1]
    g = dout.reshape(b, f, d, t)
    dw = np.matmul(g, x.transpose(0, 1, 3, 2)).sum(axis=0)[..., None]
    dx = np.matmul(w[None, ..., 0].transpose(0, 1, 3, 2), g)
    return dx, dw


# ---------------------------------------------------------------------------
# separable convolution


def separable_conv2d_forward(x, depth_w, point_w):
    """Per-map "same" temporal filter followed by 1x1 map mixing.

    x: (B, F, 1, T); depth_w: (F, 1, K); point_w: (F_out, F) -> (B, F_out, 1, T).
    """
    if x.ndim != 4 or depth_w.ndim != 3 or depth_w.shape[:2] != (x.shape[1], 1):
        raise ShapeError(
            f"depth kernel shape {depth_w.shape} incompatible with input {x.shape}")
    if point_w.ndim != 2 or point_w.shape[1] != x.shape[1]:
        raise ShapeError(
            f"pointwise kernel shape {point_w.shape} needs input extent "
            f"{x.shape[1]}")
    bands = _banded_per_map(depth_w[:, 0, :], x.shape[-1])
    h = np.matmul(x, bands[None])  # (B, F, C, T) @ (1, F, T, T)
    out = np.einsum("of,bfct->boct", point_w, h, optimize=True)
    return out, (x, depth_w, point_w, h, bands)


def _banded_per_map(w, length):
    # M[f, s, t] = w[f, s - t + left]; one Toeplitz matrix per map
    f, k = w.shape
    s_idx, t_idx, k_idx, _ = _toeplitz_index(length, k)
    m = np.zeros((f, length, length), dtype=w.dtype)
    m[:, s_idx, t_idx] = w[:, k_idx]
    return m


def separable_conv2d_backward(dout, cache):
    x, depth_w, point_w, h, bands = cache
    b, f, c, t = x.shape
    k = depth_w.shape[2]
    dpoint = np.einsum("boct,bfct->of", dout, h, optimize=True)
    dh = np.einsum("of,boct->bfct", point_w, dout, optimize=True)
    # per-map banded gradient, then summed along each diagonal
    xf = x.transpose(1, 0, 2, 3).reshape(f, b * c, t)
    dhf = dh.transpose(1, 0, 2, 3).reshape(f, b * c, t)
    dm = np.matmul(xf.transpose(0, 2, 1), dhf)  # (F, T, T)
    s_idx, t_idx, _, starts = _toeplitz_index(t, k)
    ddepth = np.add.reduceat(dm[:, s_idx, t_idx], starts, axis=1)[:, None, :]
    dx = np.matmul(dh, bands.transpose(0, 2, 1)[None])
    return dx, ddepth, dpoint


# ---------------------------------------------------------------------------
# batch normalization


def batchnorm_forward(x, gamma, beta, state, mode, update_state=True,
                      eps=BN_EPS, momentum=BN_MOMENTUM):
    """Per-map normalization over batch and all trailing positions.

    ``state`` holds the running ``mean``/``var`` arrays. They are replaced
    (not mutated) by their exponential moving average only in Train mode
    with ``update_state`` set.
    """
    # statistics come from einsum reductions on a (B, F, M) view, and the
    # output is a single per-map affine map of x
    x3 = x.reshape(x.shape[0], x.shape[1], -1)
    if mode == Mode.TRAIN:
        if x.shape[0] < 2:
            raise ValueError(
                f"batch norm in train mode needs batch size >= 2, got {x.shape[0]}")
        n = x3.shape[0] * x3.shape[2]
        mu = np.einsum("bfm->f", x3) / n
        var = np.maximum(np.einsum("bfm,bfm->f", x3, x3) / n - mu * mu, 0)
        if update_state:
            state["mean"] = (momentum * state["mean"]
                             + (1 - momentum) * mu).astype(state["mean"].dtype)
            state["var"] = (momentum * state["var"]
                            + (1 - momentum) * var).astype(state["var"].dtype)
    else:
        mu, var = state["mean"], state["var"]
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    mu = mu.astype(x.dtype)
    scale = gamma * inv_std
    out = x3 * scale[None, :, None]
    out += (beta - mu * scale)[None, :, None]
    return out.reshape(x.shape), (x3, mu, gamma, inv_std, mode)


def batchnorm_backward(dout, cache):
    # xhat = (x - mu) * inv_std is never stored; its sums follow from those of x
    x3, mu, gamma, inv_std, mode = cache
    d3 = dout.reshape(x3.shape)
    dbeta = np.einsum("bfm->f", d3)
    dgamma = inv_std * (np.einsum("bfm,bfm->f", d3, x3) - mu * dbeta)
    scale = gamma * inv_std
    dx = d3 * scale[None, :, None]
    if mode == Mode.TRAIN:
        n = x3.shape[0] * x3.shape[2]
        c1 = scale * inv_std * dgamma / n
        c0 = scale * (mu * inv_std * dgamma - dbeta) / n
        dx -= x3 * c1[None, :, None]
        dx += c0[None, :, None]
    return dx.reshape(dout.shape), dgamma, dbeta


# ---------------------------------------------------------------------------
# elementwise and pooling


def elu_forward(x):
    # expm1(x) >= x everywhere, so the maximum picks the right branch
    out = np.expm1(np.minimum(x, 0))
    np.maximum(x, out, out=out)
    return out, (x, out)


def elu_backward(dout, cache):
    _, out = cache
    # slope is 1 on the positive branch and exp(x) = out + 1 elsewhere
    slope = np.minimum(out, 0)
    slope += 1
    slope *= dout
    return slope


def avg_pool_forward(x, window):
    """Non-overlapping mean pool on the last axis; the remainder is dropped."""
    if window < 1:
        raise ValueError(f"pool window must be >= 1, got {window}")
    t = x.shape[-1]
    n = t // window
    out = x[..., :n * window].reshape(x.shape[:-1] + (n, window)).mean(axis=-1)
    return out.astype(x.dtype, copy=False), (t, window)


def avg_pool_backward(dout, cache):
    t, window = cache
    dx = np.zeros(dout.shape[:-1] + (t,), dtype=dout.dtype)
    n = dout.shape[-1]
    dx[..., :n * window] = np.repeat(dout / window, window, axis=-1)
    return dx


def dropout_forward(x, p, mode, rng=None):
    """Inverted dropout: survivors are scaled by 1/(1-p) at train time."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
    if mode != Mode.TRAIN or p == 0:
        return x, None
    keep = rng.random(x.shape) >= p
    mask = keep.astype(x.dtype) / x.dtype.type(1 - p)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


# ---------------------------------------------------------------------------
# dense head and loss


def dense_forward(x, w, b):
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(
            f"dense shapes disagree: input {x.shape}, weights {w.shape}, bias {b.shape}")
    return x @ w + b, (x, w)


def dense_backward(dout, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, onehot):
    """Mean categorical cross-entropy.

    Returns ``(loss, probs, dlogits)`` with ``dlogits = (probs - onehot) / B``.
    """
    if onehot.shape != logits.shape:
        raise ShapeError(f"one-hot shape {onehot.shape} != logits {logits.shape}")
    if not (np.all((onehot == 0) | (onehot == 1)) and np.all(onehot.sum(axis=1) == 1)):
        raise ValueError("every one-hot row must contain exactly one 1")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - log_norm
    probs = np.exp(logp)
    b = logits.shape[0]
    loss = -(logp * onehot).sum() / b
    return float(loss), probs, (probs - onehot) / logits.dtype.type(b)


def one_hot(labels, n_classes, dtype=np.float32):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels out of range for {n_classes} classes")
    out = np.zeros((labels.size, n_classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1
    return out
