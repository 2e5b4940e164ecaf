"""Per-sequence KV cache whose K and V stores have different shapes.

K and V live in separate contiguous regions because their per-token sizes
differ: K holds [b, len, n_k, d_k_head] and V holds [b, len, n_v, d_head].
Capacity is reserved up front so element accounting is exact and deterministic.
A cache has a single writer; the views handed out by :meth:`view` are
read-only snapshots of the written prefix and stay valid across later appends
(appended positions never mutate earlier ones).
"""

from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np

from .config import ValidatedConfig
from .errors import (
    CapacityError,
    CapacityExceededError,
    DegradedPathWarning,
    DivisibilityError,
    ShapeError,
)


class CacheFootprint(NamedTuple):
    k_elements: int
    v_elements: int
    total: int


class DifferentialKVCache:
    """Append-only K/V store for incremental decoding."""

    def __init__(self, cfg: ValidatedConfig, batch: int, capacity: int):
        if capacity < 1:
            raise CapacityError(f"capacity must be >= 1, got {capacity}")
        if batch < 1:
            raise CapacityError(f"batch must be >= 1, got {batch}")
        self.cfg = cfg
        self.batch = batch
        self.capacity = capacity
        self.len = 0
        self._k = np.zeros((batch, capacity, cfg.n_k_heads, cfg.d_k_head))
        self._v = np.zeros((batch, capacity, cfg.n_v_heads, cfg.d_head))

    @property
    def k_shape(self) -> tuple[int, ...]:
        return (self.batch, self.len, self.cfg.n_k_heads, self.cfg.d_k_head)

    @property
    def v_shape(self) -> tuple[int, ...]:
        return (self.batch, self.len, self.cfg.n_v_heads, self.cfg.d_head)

    def append(self, k_t: np.ndarray, v_t: np.ndarray) -> None:
        """Store one position; k_t [b, 1, n_k, d_k_head], v_t [b, 1, n_v, d_head]."""
        if self.len >= self.capacity:
            raise CapacityExceededError(
                f"cache is full (capacity {self.capacity})"
            )
        want_k = (self.batch, 1, self.cfg.n_k_heads, self.cfg.d_k_head)
        want_v = (self.batch, 1, self.cfg.n_v_heads, self.cfg.d_head)
        if k_t.shape != want_k:
            raise ShapeError(f"k_t has shape {k_t.shape}, expected {want_k}")
        if v_t.shape != want_v:
            raise ShapeError(f"v_t has shape {v_t.shape}, expected {want_v}")
        self._k[:, self.len] = k_t[:, 0]
        self._v[:, self.len] = v_t[:, 0]
        self.len += 1

    def view(self) -> tuple[np.ndarray, np.ndarray]:
        """Read-only views of the stored prefix: K [b, len, ...], V [b, len, ...]."""
        k = self._k[:, : self.len]
        v = self._v[:, : self.len]
        k.flags.writeable = False
        v.flags.writeable = False
        return k, v

    def footprint(self) -> CacheFootprint:
        """Exact element counts: total = b * len * (n_k*d_k + n_v*d_v)."""
        k_elements = self.batch * self.len * self.cfg.n_k_heads * self.cfg.d_k_head
        v_elements = self.batch * self.len * self.cfg.n_v_heads * self.cfg.d_head
        return CacheFootprint(k_elements, v_elements, k_elements + v_elements)

    def footprint_csv_row(self, config_name: str, bytes_per_element: int = 8) -> str:
        fp = self.footprint()
        return (
            f"{config_name},{self.batch},{self.len},"
            f"{fp.k_elements},{fp.v_elements},{fp.total},{fp.total * bytes_per_element}"
        )


FOOTPRINT_CSV_HEADER = "config,batch,len,k_elements,v_elements,total_elements,bytes"


def cache_new(cfg: ValidatedConfig, batch: int, capacity: int) -> DifferentialKVCache:
    return DifferentialKVCache(cfg, batch, capacity)


def kv_group_balance(k: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Duplicate the smaller-head-count store so K and V head counts match.

    Compatibility path for layouts that require equal K/V head counts.  This
    is a DEGRADED path: duplicating heads restores the GQA memory layout and
    forfeits the differential-cache saving, so a DegradedPathWarning is
    emitted whenever duplication actually happens.

    Args:
        k: [b, len, n_k, d], v: [b, len, n_v, d].
    Returns:
        (k', v') with equal head counts; the larger store is returned unchanged.
    """
    n_k, n_v = k.shape[2], v.shape[2]
    if n_k == n_v:
        return k, v
    if n_k > n_v:
        if n_k % n_v != 0:
            raise DivisibilityError(f"n_k={n_k} is not a multiple of n_v={n_v}")
        warnings.warn(
            "kv_group_balance duplicated V heads; differential-cache savings are lost",
            DegradedPathWarning,
            stacklevel=2,
        )
        return k, np.repeat(v, n_k // n_v, axis=2)
    if n_v % n_k != 0:
        raise DivisibilityError(f"n_v={n_v} is not a multiple of n_k={n_k}")
    warnings.warn(
        "kv_group_balance duplicated K heads; differential-cache savings are lost",
        DegradedPathWarning,
        stacklevel=2,
    )
    return np.repeat(k, n_v // n_k, axis=2), v
