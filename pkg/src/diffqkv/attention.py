"""Reference implementation of DiffQKV attention as pure functions.

Everything here operates on plain float64 ``numpy`` arrays and is free of
side effects, so any function may be called concurrently.  The composition
``naive_diffqkv_attention`` is the correctness oracle every other attention
path in the package (chunked kernel, incremental decode, selective V) is
measured against.

Shapes follow the convention ``[batch, seq, heads, dim]``; weights are plain
2-D matrices applied on the right (``x @ w``), bias-free throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ValidatedConfig
from .errors import ConfigError, DimensionError, DivisibilityError, ShapeError


def silu(x: np.ndarray) -> np.ndarray:
    """Sigmoid-weighted linear unit, x * sigmoid(x)."""
    return x / (1.0 + np.exp(-x))


@dataclass
class AttentionWeights:
    """Projection weights of one DiffQKV attention layer.

    ``w_q`` maps d_model -> d_model when the augmented-Q block is present
    (the gated block then maps down to n_q*d_head), and d_model -> n_q*d_head
    directly when it is absent.  ``w_k_expand`` is present exactly when the
    stored K dimension is smaller than d_head.
    """

    w_q: np.ndarray  # [d_model, d_model] or [d_model, n_q*d_head]
    w_k: np.ndarray  # [d_model, n_k*d_k_head]
    w_v: np.ndarray  # [d_model, n_v*d_head]
    w_o: np.ndarray  # [n_q*d_head, d_model]
    w_q_gate: np.ndarray | None = None  # [d_model, aug_q_dim]
    w_q_up: np.ndarray | None = None  # [d_model, aug_q_dim]
    w_q_down: np.ndarray | None = None  # [aug_q_dim, n_q*d_head]
    w_k_expand: np.ndarray | None = None  # [d_k_head, d_head]

    def named_tensors(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for name in ("w_q", "w_k", "w_v", "w_o", "w_q_gate", "w_q_up", "w_q_down", "w_k_expand"):
            value = getattr(self, name)
            if value is not None:
                out[prefix + name] = value
        return out


@dataclass(frozen=True)
class SelectivePolicy:
    """Top-k policy for selective V fetching (k_top positions per query head)."""

    k_top: int
    renormalize: bool = False

    def __post_init__(self):
        if self.k_top < 1:
            raise ValueError(f"k_top must be >= 1, got {self.k_top}")


def init_attention_weights(
    cfg: ValidatedConfig, d_model: int | None = None, seed: int | np.random.Generator = 0
) -> AttentionWeights:
    """Seeded N(0, 0.02) initialization of all projection weights."""
    if d_model is None:
        d_model = cfg.n_q_heads * cfg.d_head
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def w(rows, cols):
        return rng.normal(0.0, 0.02, size=(rows, cols))

    q_out = d_model if cfg.has_aug_q else cfg.n_q_heads * cfg.d_head
    weights = AttentionWeights(
        w_q=w(d_model, q_out),
        w_k=w(d_model, cfg.n_k_heads * cfg.d_k_head),
        w_v=w(d_model, cfg.n_v_heads * cfg.d_head),
        w_o=w(cfg.n_q_heads * cfg.d_head, d_model),
    )
    if cfg.has_aug_q:
        weights.w_q_gate = w(d_model, cfg.aug_q_dim)
        weights.w_q_up = w(d_model, cfg.aug_q_dim)
        weights.w_q_down = w(cfg.aug_q_dim, cfg.n_q_heads * cfg.d_head)
    if cfg.half_k:
        weights.w_k_expand = w(cfg.d_k_head, cfg.d_head)
    return weights


def augment_q(q_base: np.ndarray, w: AttentionWeights) -> np.ndarray:
    """Gated query expansion: w_down @ (silu(w_gate(q)) * w_up(q)).

    ``q_base`` is the output of the base query projection, shape [..., d_model];
    the result has shape [..., n_q*d_head].
    """
    if w.w_q_gate is None or w.w_q_up is None or w.w_q_down is None:
        raise ConfigError("augment_q called but the augmented-Q weights are absent")
    return (silu(q_base @ w.w_q_gate) * (q_base @ w.w_q_up)) @ w.w_q_down


def project_qkv(
    x: np.ndarray, w: AttentionWeights, cfg: ValidatedConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project hidden states to per-head q, k, v (no bias terms anywhere).

    Args:
        x: [b, s, d_model] hidden states.
    Returns:
        q [b, s, n_q, d_head], k [b, s, n_k, d_k_head], v [b, s, n_v, d_head].
    """
    if x.ndim != 3 or x.shape[-1] != w.w_q.shape[0]:
        raise ShapeError(
            f"expected x of shape [b, s, {w.w_q.shape[0]}], got {x.shape}"
        )
    b, s, _ = x.shape
    q_flat = x @ w.w_q
    if cfg.has_aug_q:
        q_flat = augment_q(q_flat, w)
    q = q_flat.reshape(b, s, cfg.n_q_heads, cfg.d_head)
    k = (x @ w.w_k).reshape(b, s, cfg.n_k_heads, cfg.d_k_head)
    v = (x @ w.w_v).reshape(b, s, cfg.n_v_heads, cfg.d_head)
    return q, k, v


def rope_angles(positions: np.ndarray, dim: int, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin tables of shape [len(positions), dim // 2]."""
    half = dim // 2
    inv_freq = theta ** (-np.arange(half, dtype=np.float64) * 2.0 / dim)
    angles = np.asarray(positions, dtype=np.float64)[:, None] * inv_freq[None, :]
    return np.cos(angles), np.sin(angles)


def _rotate(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    # x: [..., s, n, d]; cos/sin: [s, d/2]. Consecutive pairs (x0, x1) rotate to
    # (x0*cos - x1*sin, x0*sin + x1*cos).
    even = x[..., 0::2]
    odd = x[..., 1::2]
    c = cos[:, None, :]
    s = sin[:, None, :]
    out = np.empty_like(x)
    out[..., 0::2] = even * c - odd * s
    out[..., 1::2] = even * s + odd * c
    return out


def apply_rope(
    q: np.ndarray, k: np.ndarray, positions, theta: float
) -> tuple[np.ndarray, np.ndarray]:
    """Rotary position embedding on the last dimension of q and k.

    ``positions`` gives the absolute position of each sequence index; q and k
    may have different last dimensions and each uses its own frequency table.
    """
    for name, t in (("q", q), ("k", k)):
        if t.shape[-1] % 2 != 0:
            raise DimensionError(f"rotary embedding needs an even last dim; {name} has {t.shape[-1]}")
    positions = np.asarray(positions)
    q_cos, q_sin = rope_angles(positions, q.shape[-1], theta)
    k_cos, k_sin = rope_angles(positions, k.shape[-1], theta)
    return _rotate(q, q_cos, q_sin), _rotate(k, k_cos, k_sin)


def expand_k_dim(k: np.ndarray, w: AttentionWeights) -> np.ndarray:
    """Map stored K vectors [..., d_k_head] up to [..., d_head]; single linear layer."""
    if w.w_k_expand is None:
        raise ConfigError("expand_k_dim called but d_k_head == d_head (no expansion layer)")
    return k @ w.w_k_expand


def group_share(heads: np.ndarray, n_q: int) -> np.ndarray:
    """Duplicate source heads in blocks so head i serves q heads [i*g, (i+1)*g).

    Args:
        heads: [b, t, n_src, d].
    Returns:
        [b, t, n_q, d] with each source head repeated n_q // n_src times.
    """
    n_src = heads.shape[2]
    if n_q % n_src != 0:
        raise DivisibilityError(f"n_q={n_q} is not a multiple of n_src={n_src}")
    reps = n_q // n_src
    if reps == 1:
        return heads
    return np.repeat(heads, reps, axis=2)


def attention_scores(
    q: np.ndarray,
    k_shared: np.ndarray,
    scale_dim: int,
    causal_mask_len: int,
) -> np.ndarray:
    """Per-head softmax attention weights for one query position.

    Args:
        q: [b, n_q, d] query vectors.
        k_shared: [b, t, n_q, d] keys already group-shared (and expanded /
            rotary-embedded where applicable).
        scale_dim: dimension whose square root divides the logits.
        causal_mask_len: positions >= this index get weight exactly 0.
    Returns:
        alpha: [b, n_q, t]; each unmasked row sums to 1.
    """
    if q.shape[0] != k_shared.shape[0] or q.shape[1:] != k_shared.shape[2:]:
        raise ShapeError(f"q {q.shape} does not match k_shared {k_shared.shape}")
    logits = np.einsum("bhd,bthd->bht", q, k_shared) / np.sqrt(float(scale_dim))
    t = k_shared.shape[1]
    if causal_mask_len < t:
        logits[:, :, causal_mask_len:] = -np.inf
    logits -= logits.max(axis=-1, keepdims=True)
    weights = np.exp(logits)
    return weights / weights.sum(axis=-1, keepdims=True)


def weighted_value_sum(alpha: np.ndarray, v_shared: np.ndarray) -> np.ndarray:
    """Per-head convex combination of V rows: [b, n_q, t] x [b, t, n_q, d] -> [b, n_q, d]."""
    return np.einsum("bht,bthd->bhd", alpha, v_shared)


def attention_output(alpha: np.ndarray, v_shared: np.ndarray, w_o: np.ndarray) -> np.ndarray:
    """Weighted V sum per head, heads concatenated in index order, then w_o."""
    o = weighted_value_sum(alpha, v_shared)
    b = o.shape[0]
    return o.reshape(b, -1) @ w_o


def naive_diffqkv_attention(
    x: np.ndarray, w: AttentionWeights, cfg: ValidatedConfig
) -> np.ndarray:
    """Full causal DiffQKV attention over a sequence, position by position.

    project -> augmented Q -> rotary -> K expansion (half-K mode) -> group
    sharing -> softmax scores -> weighted V sum -> output projection.  This is
    the reference oracle for the chunked kernel and the incremental decode
    path, so it stays deliberately simple.
    """
    b, s, _ = x.shape
    q, k, v = project_qkv(x, w, cfg)
    q, k = apply_rope(q, k, np.arange(s), cfg.rope_theta)
    if cfg.half_k:
        k = expand_k_dim(k, w)
    k_shared = group_share(k, cfg.n_q_heads)
    v_shared = group_share(v, cfg.n_q_heads)

    out = np.empty((b, s, w.w_o.shape[1]))
    for t in range(s):
        prefix_k = k_shared[:, : t + 1]
        prefix_v = v_shared[:, : t + 1]
        alpha = attention_scores(q[:, t], prefix_k, cfg.softmax_scale_dim, t + 1)
        out[:, t] = attention_output(alpha, prefix_v, w.w_o)
    return out


def select_top_k(alpha: np.ndarray, policy: SelectivePolicy) -> np.ndarray:
    """Keep the k_top highest weights per head (ties to the earliest position).

    Dropped positions get weight 0; if ``policy.renormalize`` the kept weights
    are rescaled to sum to 1.  With k_top >= t the input is returned unchanged.
    """
    t = alpha.shape[-1]
    if policy.k_top >= t:
        return alpha
    # Stable sort on -alpha: equal weights keep ascending position order.
    order = np.argsort(-alpha, axis=-1, kind="stable")
    kept = order[..., : policy.k_top]
    mask = np.zeros_like(alpha)
    np.put_along_axis(mask, kept, 1.0, axis=-1)
    selected = alpha * mask
    if policy.renormalize:
        selected = selected / selected.sum(axis=-1, keepdims=True)
    return selected


def selective_v_attention(
    alpha: np.ndarray,
    v_shared: np.ndarray,
    policy: SelectivePolicy,
    w_o: np.ndarray,
) -> np.ndarray:
    """Approximate attention output using only the top-k V rows per head."""
    return attention_output(select_top_k(alpha, policy), v_shared, w_o)
