"""Independent attention references for equivalence checking.

Deliberately separate code paths from :mod:`diffqkv.attention`: everything is
computed with one-shot full score matrices and explicit masks, no group
sharing, no shared softmax helper.  Used by the degenerate-mode and
grouped-mode equivalence suites.
"""

from __future__ import annotations

import numpy as np

from .attention import AttentionWeights
from .config import ValidatedConfig


def _rotary(x: np.ndarray, positions: np.ndarray, theta: float) -> np.ndarray:
    # x: [b, s, h, d]; rotate consecutive pairs by pos * theta^(-2i/d).
    d = x.shape[-1]
    inv_freq = theta ** (-2.0 * np.arange(d // 2) / d)
    ang = positions[:, None] * inv_freq[None, :]
    cos = np.cos(ang)[None, :, None, :]
    sin = np.sin(ang)[None, :, None, :]
    out = np.empty_like(x)
    out[..., 0::2] = x[..., 0::2] * cos - x[..., 1::2] * sin
    out[..., 1::2] = x[..., 0::2] * sin + x[..., 1::2] * cos
    return out


def vanilla_mha_attention(
    x: np.ndarray, w: AttentionWeights, cfg: ValidatedConfig
) -> np.ndarray:
    """Plain multi-head attention; valid when n_q = n_k = n_v and d_k = d_head."""
    assert cfg.n_q_heads == cfg.n_k_heads == cfg.n_v_heads
    assert cfg.d_k_head == cfg.d_head and not cfg.has_aug_q
    b, s, _ = x.shape
    h, d = cfg.n_q_heads, cfg.d_head
    positions = np.arange(s)
    q = _rotary((x @ w.w_q).reshape(b, s, h, d), positions, cfg.rope_theta)
    k = _rotary((x @ w.w_k).reshape(b, s, h, d), positions, cfg.rope_theta)
    v = (x @ w.w_v).reshape(b, s, h, d)

    scores = np.einsum("bihd,bjhd->bhij", q, k) / np.sqrt(float(cfg.softmax_scale_dim))
    scores = scores + np.triu(np.full((s, s), -np.inf), k=1)
    scores -= scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    ctx = np.einsum("bhij,bjhd->bihd", weights, v)
    return ctx.reshape(b, s, h * d) @ w.w_o


def grouped_attention_by_duplication(
    x: np.ndarray, w: AttentionWeights, cfg: ValidatedConfig
) -> np.ndarray:
    """Grouped/differential attention via explicit head duplication.

    Projects at native head counts, duplicates K and V heads up to n_q with
    np.repeat, then runs the one-shot masked-softmax path above.  Handles
    augmented Q and half-K configurations too.
    """
    b, s, _ = x.shape
    n_q, d = cfg.n_q_heads, cfg.d_head
    positions = np.arange(s)

    q_flat = x @ w.w_q
    if cfg.has_aug_q:
        gate = q_flat @ w.w_q_gate
        q_flat = ((gate / (1.0 + np.exp(-gate))) * (q_flat @ w.w_q_up)) @ w.w_q_down
    q = _rotary(q_flat.reshape(b, s, n_q, d), positions, cfg.rope_theta)
    k = _rotary(
        (x @ w.w_k).reshape(b, s, cfg.n_k_heads, cfg.d_k_head), positions, cfg.rope_theta
    )
    if cfg.half_k:
        k = k @ w.w_k_expand
    v = (x @ w.w_v).reshape(b, s, cfg.n_v_heads, d)

    k = np.repeat(k, n_q // cfg.n_k_heads, axis=2)
    v = np.repeat(v, n_q // cfg.n_v_heads, axis=2)

    scores = np.einsum("bihd,bjhd->bhij", q, k) / np.sqrt(float(cfg.softmax_scale_dim))
    scores = scores + np.triu(np.full((s, s), -np.inf), k=1)
    scores -= scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    ctx = np.einsum("bhij,bjhd->bihd", weights, v)
    return ctx.reshape(b, s, n_q * d) @ w.w_o
