"""Scaled dot-product, multi-head and sparse-query attention plus the distilling layer."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T

_MASK_FILL = -1e9


def scaled_dot_attention(Q, K, V, causal: bool = False, return_weights: bool = False):
    Q, K, V = T.const(Q), T.const(K), T.const(V)
    d_k = Q.shape[-1]
    if d_k == 0:
        raise ValueError("key width d_k must be positive")
    if K.shape[-1] != d_k or K.shape[-2] != V.shape[-2]:
        raise ValueError(f"incompatible shapes Q{Q.shape} K{K.shape} V{V.shape}")
    scores = T.matmul(Q, T.swapaxes(K, -1, -2)) * (1.0 / math.sqrt(d_k))
    if causal:
        scores = scores + _causal_fill(Q.shape[-2], K.shape[-2])
    w = T.softmax(scores, -1)
    out = T.matmul(w, V)
    return (out, w) if return_weights else out


def _causal_fill(l_q: int, l_k: int) -> np.ndarray:
    # query i (aligned to the end of the key sequence) may see keys j <= i + (l_k - l_q)
    i = np.arange(l_q)[:, None] + (l_k - l_q)
    j = np.arange(l_k)[None, :]
    return np.where(j > i, _MASK_FILL, 0.0)


def sparsity_measurement(q: np.ndarray, K_hat: np.ndarray) -> float:
    """max_j(q.k_j/sqrt(d)) - mean_j(q.k_j/sqrt(d)) over the sampled keys."""
    K_hat = np.atleast_2d(K_hat)
    if K_hat.shape[0] < 1:
        raise ValueError("need at least one sampled key")
    s = K_hat @ np.asarray(q) / math.sqrt(K_hat.shape[1])
    return float(s.max() - s.mean())


def sparsity_scores(Q: np.ndarray, K_hat: np.ndarray) -> np.ndarray:
    """Vectorised sparsity measurement of every query row, shape (..., l_Q)."""
    s = Q @ np.swapaxes(K_hat, -1, -2) / math.sqrt(Q.shape[-1])
    return s.max(axis=-1) - s.mean(axis=-1)


def sample_count(length: int, factor: float = 5.0) -> int:
    return max(1, min(length, int(math.ceil(factor * math.log(max(length, 2))))))


@dataclass
class SparseSelection:
    U: int
    u: int
    key_idx: np.ndarray
    selected_idx: np.ndarray       # (..., u) query indices, highest measurement first


def select_queries(Q: np.ndarray, K: np.ndarray, U: int, u: int, rng: np.random.Generator) -> SparseSelection:
    l_q, l_k = Q.shape[-2], K.shape[-2]
    if not 1 <= u <= l_q:
        raise ValueError(f"u must lie in [1, {l_q}], got {u}")
    if not 1 <= U <= l_k:
        raise ValueError(f"U must lie in [1, {l_k}], got {U}")
    key_idx = np.sort(rng.choice(l_k, size=U, replace=False))
    sm = sparsity_scores(Q, K[..., key_idx, :])
    order = np.argsort(-sm, axis=-1, kind="stable")
    return SparseSelection(U, u, key_idx, order[..., :u])


def probsparse_attention(Q, K, V, U: int, u: int, rng: np.random.Generator,
                         causal: bool = False, return_selection: bool = False):
    """Full attention for the Top-u queries; the rest get the mean of V.

    Under ``causal`` the lazy fill is the running mean of V so no row sees the future.
    """
    Q, K, V = T.const(Q), T.const(K), T.const(V)
    l_q = Q.shape[-2]
    sel = select_queries(Q.data, K.data, U, u, rng)
    if u >= l_q:
        out = scaled_dot_attention(Q, K, V, causal=causal)
        return (out, sel) if return_selection else out
    chosen = np.zeros(Q.shape[:-1] + (1,))
    np.put_along_axis(chosen, sel.selected_idx[..., None], 1.0, axis=-2)
    full = scaled_dot_attention(Q, K, V, causal=causal)
    if causal:
        l_k = V.shape[-2]
        w = np.tril(np.ones((l_k, l_k))) / np.arange(1, l_k + 1)[:, None]
        lazy = T.matmul(w[l_k - l_q:], V)
    else:
        lazy = T.mean(V, axis=-2, keepdims=True)
    out = full * chosen + lazy * (1.0 - chosen)
    return (out, sel) if return_selection else out


@dataclass
class AttentionParams:
    W_Q: T.Tensor
    W_K: T.Tensor
    W_V: T.Tensor
    W_O: T.Tensor
    h: int

    @property
    def d_model(self) -> int:
        return self.W_Q.shape[0]

    def tensors(self) -> dict:
        return {"W_Q": self.W_Q, "W_K": self.W_K, "W_V": self.W_V, "W_O": self.W_O}

    @classmethod
    def init(cls, rng: np.random.Generator, d_model: int, h: int) -> "AttentionParams":
        if d_model % h:
            raise ValueError(f"model width {d_model} is not divisible by {h} heads")
        s = 1.0 / math.sqrt(d_model)
        mk = lambda: T.Tensor(rng.normal(0, s, size=(d_model, d_model)), requires_grad=True)  # noqa: E731
        return cls(mk(), mk(), mk(), mk(), h)


def _split_heads(x: T.Tensor, h: int) -> T.Tensor:
    *lead, L, d = x.shape
    x = T.reshape(x, tuple(lead) + (L, h, d // h))
    return T.swapaxes(x, -2, -3)


def _merge_heads(x: T.Tensor) -> T.Tensor:
    x = T.swapaxes(x, -2, -3)
    *lead, L, h, dk = x.shape
    return T.reshape(x, tuple(lead) + (L, h * dk))


def multihead(X_q, X_kv, params: AttentionParams, attention_kind: str = "full", causal: bool = False,
              rng: np.random.Generator | None = None, W_O=None, factor: float = 5.0):
    """Concat of per-head attention on projected inputs, then the output projection.

    ``W_O`` overrides the stored output matrix (used for dropout-masked weights).
    """
    h = params.h
    if h < 1:
        raise ValueError("need at least one head")
    X_q, X_kv = T.const(X_q), T.const(X_kv)
    if X_q.shape[-1] % h:
        raise ValueError(f"model width {X_q.shape[-1]} is not divisible by {h} heads")
    q = _split_heads(T.matmul(X_q, params.W_Q), h)
    k = _split_heads(T.matmul(X_kv, params.W_K), h)
    v = _split_heads(T.matmul(X_kv, params.W_V), h)
    if attention_kind == "full":
        heads = scaled_dot_attention(q, k, v, causal=causal)
    elif attention_kind == "probsparse":
        rng = rng if rng is not None else np.random.default_rng(0)
        heads = probsparse_attention(q, k, v, sample_count(k.shape[-2], factor),
                                     sample_count(q.shape[-2], factor), rng, causal=causal)
    else:
        raise ValueError(f"unknown attention kind {attention_kind!r}")
    return T.matmul(_merge_heads(heads), params.W_O if W_O is None else W_O)


def maxpool_time(x, size: int = 2) -> T.Tensor:
    """Non-overlapping max pooling over axis -2 of (..., L, C)."""
    x = T.const(x)
    *lead, L, C = x.shape
    x = T.reshape(x, tuple(lead) + (L // size, size, C))
    return T.amax(x, axis=-2)


def distill_layer(X, kernels, bias=None, slope: float = 0.2) -> T.Tensor:
    """conv1d (kernel 3, same padding) + LReLU + stride-2 max-pool: (..., L, C) -> (..., L/2, C')."""
    X = T.const(X)
    L = X.shape[-2]
    if L % 2:
        raise ValueError(f"distilling needs an even sequence length, got {L}")
    k = T.const(kernels).shape[-1]
    y = T.conv1d(T.swapaxes(X, -1, -2), kernels, padding=k // 2)     # (..., C', L)
    y = T.swapaxes(y, -1, -2)
    if bias is not None:
        y = y + bias
    return maxpool_time(T.lrelu(y, slope), 2)
