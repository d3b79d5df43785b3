"""Bit-packed Hamming search: XOR plus popcount over a linear scan.

Desk-scale databases fit a flat scan comfortably, so there is no
multi-index structure here; exactness and deterministic ordering are
the contract.  Ties in distance break by ascending item id, which keeps
every downstream metric reproducible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .continuation import words_per_code
from .datatypes import CodeSet, ValidationError


def popcount(words: np.ndarray) -> np.ndarray:
    return np.bitwise_count(np.asarray(words, dtype=np.uint64))


def _mask(n_bits: int) -> np.ndarray:
    """Per-word mask keeping only the low n_bits of a packed code."""
    n_words = words_per_code(n_bits)
    mask = np.full(n_words, np.uint64(0xFFFFFFFFFFFFFFFF), dtype=np.uint64)
    tail = n_bits % 64
    if tail:
        mask[-1] = np.uint64((1 << tail) - 1)
    return mask


def hamming_distance(a: np.ndarray, b: np.ndarray, n_bits: int) -> int:
    """Differing-bit count between two packed codes of the same length."""
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    n_words = words_per_code(n_bits)
    if a.shape != (n_words,) or b.shape != (n_words,):
        raise ValidationError(
            f"expected {n_words}-word codes for {n_bits} bits, got {a.shape} and {b.shape}"
        )
    m = _mask(n_bits)
    return int(popcount((a & m) ^ (b & m)).sum())


def pairwise_distances(words_a: np.ndarray, words_b: np.ndarray, n_bits: int) -> np.ndarray:
    """(n_a, n_b) distance matrix between two packed code arrays."""
    a = np.asarray(words_a, dtype=np.uint64)
    b = np.asarray(words_b, dtype=np.uint64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValidationError(f"word arrays disagree: {a.shape} vs {b.shape}")
    m = _mask(n_bits)
    x = (a[:, None, :] & m) ^ (b[None, :, :] & m)
    return popcount(x).sum(axis=2).astype(np.int64)


@dataclass(frozen=True)
class RankedResult:
    """Database ids in ascending-distance order, ties by ascending id."""

    item_ids: np.ndarray
    distances: np.ndarray

    def __post_init__(self):
        if len(self.item_ids) != len(self.distances):
            raise ValidationError("ranked ids and distances must align")
        if len(self.distances) > 1 and np.any(np.diff(self.distances) < 0):
            raise ValidationError("ranked distances must be non-decreasing")

    def __len__(self):
        return len(self.item_ids)


class HammingIndex:
    """Immutable flat index over one CodeSet; every query is a full scan."""

    def __init__(self, codes: CodeSet):
        self.n_bits = codes.n_bits
        self.ids = codes.ids.astype(np.int64)
        self.words = np.ascontiguousarray(codes.words)
        self._order_key = self.ids  # secondary sort key for ties

    @property
    def n(self) -> int:
        return len(self.ids)

    def distances(self, query_words: np.ndarray) -> np.ndarray:
        q = np.asarray(query_words, dtype=np.uint64)
        n_words = words_per_code(self.n_bits)
        if q.shape != (n_words,):
            raise ValidationError(
                f"query has shape {q.shape}, index codes use {n_words} words"
            )
        return popcount(self.words ^ q).sum(axis=1).astype(np.int64)

    def rank_all(self, query_words: np.ndarray) -> RankedResult:
        d = self.distances(query_words)
        order = np.lexsort((self._order_key, d))
        return RankedResult(item_ids=self.ids[order], distances=d[order])

    def top_k(self, query_words: np.ndarray, k: int) -> RankedResult:
        if not 1 <= k <= self.n:
            raise ValidationError(f"k={k} outside [1, {self.n}]")
        full = self.rank_all(query_words)
        return RankedResult(item_ids=full.item_ids[:k], distances=full.distances[:k])


def scan_throughput(index: HammingIndex, query_words: np.ndarray, repeats: int = 5) -> dict:
    """Comparisons per second for repeated full scans; reporting aid."""
    q = np.asarray(query_words, dtype=np.uint64)
    if q.ndim != 2:
        raise ValidationError("query_words must be a 2-d word array")
    index.distances(q[0])  # warm any lazy allocation
    t0 = time.perf_counter()
    for _ in range(repeats):
        for row in q:
            index.distances(row)
    elapsed = time.perf_counter() - t0
    comparisons = repeats * len(q) * index.n
    return {
        "comparisons": comparisons,
        "seconds": elapsed,
        "comparisons_per_sec": comparisons / max(elapsed, 1e-12),
    }
