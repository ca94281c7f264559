"""Layer ops with fused backward passes.

Shape conventions: sequences are channels-last, ``(batch, length, channels)``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from specdapt.autodiff.tensor import Tensor, accumulate, as_tensor, make, matmul, reshape, scale, transpose
from specdapt.errors import ValidationError

LAYER_NORM_EPS = 1e-5
SIMPLEX_TOL = 1e-6


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x (..., n_in) @ w (n_in, n_out) + b (n_out,)``."""
    if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ValidationError(f"dense shape mismatch: x {x.shape}, w {w.shape}, b {b.shape}")
    n_in, n_out = w.shape

    def backward(g):
        if x.requires_grad:
            accumulate(x, g @ w.data.T)
        g2 = g.reshape(-1, n_out)
        if w.requires_grad:
            accumulate(w, x.data.reshape(-1, n_in).T @ g2)
        if b.requires_grad:
            accumulate(b, g2.sum(axis=0))

    return make(x.data @ w.data + b.data, (x, w, b), backward, "dense")


def conv1d(x: Tensor, w: Tensor, b: Tensor, padding="valid") -> Tensor:
    """Stride-1 convolution. ``x (B, L, C_in)``, ``w (K, C_in, C_out)``, ``b (C_out,)``.

    ``padding="same"`` zero-pads ``(K-1)//2`` on the left and the rest on the right.
    """
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1]:
        raise ValidationError(f"conv1d shape mismatch: x {x.shape}, w {w.shape}")
    k, c_in, c_out = w.shape
    batch, length, _ = x.shape
    if padding == "same":
        left = (k - 1) // 2
        right = k - 1 - left
    elif padding == "valid":
        left = right = 0
    else:
        raise ValidationError(f"unknown padding {padding!r}")
    xp = np.pad(x.data, ((0, 0), (left, right), (0, 0))) if k > 1 else x.data
    l_out = xp.shape[1] - k + 1
    if l_out < 1:
        raise ValidationError(f"conv1d kernel {k} longer than input {length}")
    # (B, L_out, C_in, K) -> (B*L_out, K*C_in) with kernel-major column order to match w
    cols = sliding_window_view(xp, k, axis=1).transpose(0, 1, 3, 2).reshape(batch * l_out, k * c_in)
    w2 = w.data.reshape(k * c_in, c_out)
    out = (cols @ w2 + b.data).reshape(batch, l_out, c_out)

    def backward(g):
        g2 = g.reshape(batch * l_out, c_out)
        if w.requires_grad:
            accumulate(w, (cols.T @ g2).reshape(k, c_in, c_out))
        if b.requires_grad:
            accumulate(b, g2.sum(axis=0))
        if x.requires_grad:
            dcols = (g2 @ w2.T).reshape(batch, l_out, k, c_in)
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[:, j : j + l_out, :] += dcols[:, :, j, :]
            accumulate(x, dxp[:, left : left + length, :])

    return make(out, (x, w, b), backward, "conv1d")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        accumulate(x, g * mask)

    return make(x.data * mask, (x,), backward, "relu")


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    cdf = 0.5 * (1.0 + erf(x.data / np.sqrt(2.0)))

    def backward(g):
        pdf = np.exp(-0.5 * x.data**2) / np.sqrt(2.0 * np.pi)
        accumulate(x, g * (cdf + x.data * pdf))

    return make(x.data * cdf, (x,), backward, "gelu")


def dropout(x: Tensor, rate: float, train: bool, rng=None) -> Tensor:
    """Inverted dropout: kept units are scaled by ``1/(1-rate)``; identity in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ValidationError("train-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def backward(g):
        accumulate(x, g * mask)

    return make(x.data * mask, (x,), backward, "dropout")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        if gamma.requires_grad:
            accumulate(gamma, (g * xhat).sum(axis=lead))
        if beta.requires_grad:
            accumulate(beta, g.sum(axis=lead))
        if x.requires_grad:
            dxhat = g * gamma.data
            dx = inv / d * (
                d * dxhat
                - dxhat.sum(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            )
            accumulate(x, dx)

    return make(xhat * gamma.data + beta.data, (x, gamma, beta), backward, "layer_norm")


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis (max-subtracted)."""
    s = _softmax(x.data)

    def backward(g):
        accumulate(x, s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return make(s, (x,), backward, "softmax")


def log_softmax_np(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def check_simplex(y: np.ndarray, tol: float = SIMPLEX_TOL) -> None:
    if np.any(y < -tol) or np.max(np.abs(y.sum(axis=-1) - 1.0)) > tol:
        raise ValidationError(f"label rows must lie on the probability simplex (tolerance {tol})")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Batch-mean of ``-sum_j y_j log softmax(logits)_j``; soft or one-hot labels."""
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != logits.shape:
        raise ValidationError(f"labels {y.shape} do not match logits {logits.shape}")
    check_simplex(y)
    n = logits.shape[0]
    logp = log_softmax_np(logits.data)
    loss = -(y * logp).sum() / n

    def backward(g):
        p = np.exp(logp)
        accumulate(logits, g * (p * y.sum(axis=-1, keepdims=True) - y) / n)

    return make(np.asarray(loss), (logits,), backward, "cross_entropy")


def embedding_add(x: Tensor, table) -> Tensor:
    """Add a ``(T, D)`` position table to every sequence of ``x (B, T, D)``."""
    table = as_tensor(table)
    if x.shape[-2:] != table.shape:
        raise ValidationError(f"embedding table {table.shape} does not match sequence {x.shape[-2:]}")
    return x + table


def multi_head_attention(x: Tensor, p: dict, prefix: str, n_heads: int) -> Tensor:
    """Scaled dot-product self-attention over ``x (B, T, D)``.

    ``p`` maps ``{prefix}.{q,k,v,o}.{w,b}`` to tensors. Normalization and the
    residual connection are the caller's job.
    """
    batch, t, d = x.shape
    if d % n_heads:
        raise ValidationError(f"model width {d} not divisible by {n_heads} heads")
    dh = d // n_heads

    def heads(name):
        h = dense(x, p[f"{prefix}.{name}.w"], p[f"{prefix}.{name}.b"])
        return transpose(reshape(h, (batch, t, n_heads, dh)), (0, 2, 1, 3))

    q, k, v = heads("q"), heads("k"), heads("v")
    scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    ctx = matmul(softmax(scores), v)
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (batch, t, d))
    return dense(ctx, p[f"{prefix}.o.w"], p[f"{prefix}.o.b"])


def sinusoidal_encoding(seq_len: int, dim: int) -> np.ndarray:
    """Fixed position table: even columns ``sin``, odd columns ``cos``."""
    if dim % 2:
        raise ValidationError(f"sinusoidal encoding needs an even dimension, got {dim}")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    freq = np.power(10000.0, -np.arange(0, dim, 2, dtype=np.float64) / dim)
    table = np.zeros((seq_len, dim))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return table
