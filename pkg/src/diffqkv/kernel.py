"""Split/combine chunked attention with per-head address probing.

The split stage scores one query against a chunk of the KV sequence, keeping
K and V at their native head counts and resolving which K/V head serves each
query head through :func:`head_index_map` (``idx_i = floor(idx_q * n_i / n_q)``).
Each chunk yields an :class:`AttentionPartial` — an unnormalized weighted V
sum plus (max, sum-exp) row statistics.  The combine stage merges partials by
a numerically stable log-sum-exp reduction that is mathematically identical
to one-pass softmax attention, whatever the chunking.

Split calls over distinct chunks are independent; combine is a deterministic
reduction whose result does not depend on grouping or order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionWeights, expand_k_dim
from .config import ValidatedConfig
from .errors import ConfigError, DivisibilityError, EmptyInputError, ShapeError
from .kvcache import DifferentialKVCache


def head_index_map(idx_q: int, n_q: int, n_i: int) -> int:
    """K/V head index serving query head ``idx_q``: floor(idx_q * n_i / n_q).

    Floor division makes contiguous blocks of query heads share one source
    head, matching the block layout of explicit group sharing.
    """
    if n_q % n_i != 0:
        raise DivisibilityError(f"n_q={n_q} is not a multiple of n_i={n_i}")
    if not 0 <= idx_q < n_q:
        raise IndexError(f"idx_q={idx_q} out of range [0, {n_q})")
    return (idx_q * n_i) // n_q


@dataclass
class AttentionPartial:
    """Per-chunk result: out_partial[h] = sum_j exp(logit_hj - row_max[h]) * V_j.

    ``row_sumexp == 0`` everywhere marks a fully masked (empty) chunk; combine
    skips such partials.
    """

    out_partial: np.ndarray  # [n_q, d_head]
    row_max: np.ndarray  # [n_q]
    row_sumexp: np.ndarray  # [n_q]

    @property
    def empty(self) -> bool:
        return bool(np.all(self.row_sumexp == 0.0))


@dataclass(frozen=True)
class ChunkPlan:
    """Contiguous, ordered, disjoint ranges covering [0, t)."""

    chunk_size: int
    boundaries: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ValueError(f"chunk_size must be >= 1, got {self.chunk_size}")
        cursor = 0
        for start, end in self.boundaries:
            if start != cursor or end <= start:
                raise ValueError(f"boundaries must tile [0, t) contiguously: {self.boundaries}")
            cursor = end

    @property
    def length(self) -> int:
        return self.boundaries[-1][1] if self.boundaries else 0

    @classmethod
    def for_length(cls, t: int, chunk_size: int) -> "ChunkPlan":
        bounds = tuple(
            (start, min(start + chunk_size, t)) for start in range(0, t, chunk_size)
        )
        return cls(chunk_size=chunk_size, boundaries=bounds)


def split_attend(
    q: np.ndarray,
    k_chunk: np.ndarray,
    v_chunk: np.ndarray,
    chunk_range: tuple[int, int],
    scale_dim: int,
    causal_limit: int,
) -> AttentionPartial:
    """Score one query against one KV chunk held at native head counts.

    Args:
        q: [n_q, d_head].
        k_chunk: [c, n_k, d_head] keys for global positions chunk_range,
            already rotary-embedded and (in half-K mode) dimension-expanded.
        v_chunk: [c, n_v, d_head].
        chunk_range: (start, end) global positions of the chunk rows.
        causal_limit: only positions < causal_limit contribute.
    """
    n_q, d_head = q.shape
    start, end = chunk_range
    if k_chunk.shape[0] != end - start or v_chunk.shape[0] != end - start:
        raise ShapeError(
            f"chunk rows {k_chunk.shape[0]}/{v_chunk.shape[0]} do not match range {chunk_range}"
        )
    if k_chunk.shape[-1] != d_head:
        raise ShapeError(f"k_chunk dim {k_chunk.shape[-1]} != d_head {d_head}")
    n_k = k_chunk.shape[1]
    n_v = v_chunk.shape[1]

    valid = min(end, causal_limit) - start
    if valid <= 0:
        # Fully masked chunk: sentinel partial that combine will skip.
        return AttentionPartial(
            out_partial=np.zeros((n_q, v_chunk.shape[-1])),
            row_max=np.full(n_q, -np.inf),
            row_sumexp=np.zeros(n_q),
        )

    # Address probing: each query head fetches its K/V head through the index
    # map instead of materializing duplicated heads.
    scale = np.sqrt(float(scale_dim))
    logits = np.empty((n_q, valid))
    for h in range(n_q):
        logits[h] = k_chunk[:valid, head_index_map(h, n_q, n_k), :] @ q[h] / scale

    row_max = logits.max(axis=1)
    expw = np.exp(logits - row_max[:, None])
    row_sumexp = expw.sum(axis=1)

    out = np.empty((n_q, v_chunk.shape[-1]))
    for h in range(n_q):
        out[h] = expw[h] @ v_chunk[:valid, head_index_map(h, n_q, n_v), :]
    return AttentionPartial(out_partial=out, row_max=row_max, row_sumexp=row_sumexp)


def merge_partials(a: AttentionPartial, b: AttentionPartial) -> AttentionPartial:
    """Pairwise log-sum-exp merge; lets combine run as a tree reduction."""
    if a.empty:
        return b
    if b.empty:
        return a
    row_max = np.maximum(a.row_max, b.row_max)
    wa = np.exp(a.row_max - row_max)
    wb = np.exp(b.row_max - row_max)
    return AttentionPartial(
        out_partial=a.out_partial * wa[:, None] + b.out_partial * wb[:, None],
        row_max=row_max,
        row_sumexp=a.row_sumexp * wa + b.row_sumexp * wb,
    )


def combine_partials(partials: list[AttentionPartial]) -> np.ndarray:
    """Merge chunk partials into the final [n_q, d_head] attention output."""
    live = [p for p in partials if not p.empty]
    if not live:
        raise EmptyInputError("combine_partials: every partial is empty")
    row_max = np.max([p.row_max for p in live], axis=0)
    z = np.zeros_like(row_max)
    out = np.zeros_like(live[0].out_partial)
    for p in live:
        w = np.exp(p.row_max - row_max)
        z += p.row_sumexp * w
        out += p.out_partial * w[:, None]
    return out / z[:, None]


def flexhead_attention(
    q: np.ndarray,
    cache: DifferentialKVCache,
    plan: ChunkPlan,
    cfg: ValidatedConfig,
    w: AttentionWeights | None = None,
    causal_limit: int | None = None,
    batch_index: int = 0,
) -> np.ndarray:
    """Chunked attention of one query [n_q, d_head] over a KV cache.

    In half-K mode the cache holds unexpanded d_k_head vectors; each chunk is
    expanded with ``w.w_k_expand`` as it is loaded.  Output equals the naive
    group-shared attention over the same data for every chunking.
    """
    if plan.length != cache.len:
        raise ShapeError(f"plan covers {plan.length} positions, cache holds {cache.len}")
    if cfg.half_k and (w is None or w.w_k_expand is None):
        raise ConfigError("half-K config needs weights with w_k_expand to load chunks")
    if causal_limit is None:
        causal_limit = cache.len
    k_store, v_store = cache.view()
    partials = []
    for start, end in plan.boundaries:
        k_chunk = k_store[batch_index, start:end]
        if cfg.half_k:
            k_chunk = expand_k_dim(k_chunk, w)
        v_chunk = v_store[batch_index, start:end]
        partials.append(
            split_attend(q, k_chunk, v_chunk, (start, end), cfg.softmax_scale_dim, causal_limit)
        )
    return combine_partials(partials)
