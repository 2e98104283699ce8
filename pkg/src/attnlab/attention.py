"""Causal multi-head attention forward pass, mechanism-agnostic.

The forward pass never branches on the mechanism: it asks
``effective_kv_weights`` for the (d, d_h) K/V projections of each head and
runs standard scaled-dot-product attention on top. Heads are concatenated
in head order; there is no output projection and no biases.

``softmax_row`` is the one softmax in the package. Decode paths reuse it so
that a probability computed during decode is bit-identical to the same
probability computed during a full forward pass, given identical inputs.
"""

from __future__ import annotations

import numpy as np

from .config import AttentionConfig
from .errors import DimensionError
from .weights import WeightSet, effective_kv_weights

RMSNORM_EPS = 1e-6


def rmsnorm(x: np.ndarray, eps: float = RMSNORM_EPS) -> np.ndarray:
    """Root-mean-square normalization along the last axis (no learned gain)."""
    x = np.asarray(x)
    ms = np.mean(np.square(x), axis=-1, keepdims=True)
    return x / np.sqrt(ms + eps)


def softmax_row(scores: np.ndarray) -> np.ndarray:
    """Stable softmax over a 1-D score vector.

    Max-subtracted; the normalizer is accumulated in float64 regardless of
    the working dtype, then the result is cast back.
    """
    m = np.max(scores)
    e = np.exp(scores - m)
    denom = e.sum(dtype=np.float64)
    return (e / denom).astype(scores.dtype, copy=False)


def forward_attention(
    w: WeightSet, config: AttentionConfig, X: np.ndarray
) -> np.ndarray:
    """Full causal attention over a sequence.

    X is (T, d); the result is (T, d) with head outputs concatenated in head
    order. Position i attends to positions 0..i. With ``config.qk_norm`` the
    query and key rows are RMS-normalized before the dot product.
    """
    X = np.asarray(X)
    if X.ndim != 2:
        raise DimensionError(f"X must be 2-D (T, d), got shape {X.shape}")
    T, d = X.shape
    if d != config.d:
        raise DimensionError(f"X has width {d}, config.d={config.d}")
    scale = config.softmax_scale
    out = np.empty((T, config.H * config.d_h), dtype=X.dtype)
    for h in range(config.H):
        wk, wv = effective_kv_weights(w, config, h)
        Q = X @ w.wq[h]
        K = X @ wk
        V = X @ wv
        if config.qk_norm:
            Q = rmsnorm(Q)
            K = rmsnorm(K)
        scores = (Q @ K.T) * scale
        lo = h * config.d_h
        for i in range(T):
            a = softmax_row(scores[i, : i + 1])
            out[i, lo : lo + config.d_h] = a @ V[: i + 1]
    return out
