"""Core value types shared across the pipeline.

All containers validate their invariants on construction; loaders and
builders rely on that rather than re-checking downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ValidationError(ValueError):
    pass


def _check_ids(ids: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.uint64)
    if ids.ndim != 1:
        raise ValidationError("ids must be a flat sequence")
    if len(np.unique(ids)) != len(ids):
        raise ValidationError("item ids must be unique")
    return ids


@dataclass
class FeatureSet:
    """N x M real-valued feature vectors with per-item identifiers."""

    ids: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        self.ids = _check_ids(self.ids)
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValidationError(f"feature data must be 2-d, got shape {self.data.shape}")
        if self.n < 1 or self.m < 1:
            raise ValidationError("empty feature set")
        if len(self.ids) != self.n:
            raise ValidationError(f"{len(self.ids)} ids for {self.n} feature rows")
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("feature data contains non-finite values")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def m(self) -> int:
        return self.data.shape[1]

    def subset(self, idx) -> "FeatureSet":
        idx = np.asarray(idx, dtype=np.int64)
        return FeatureSet(ids=self.ids[idx], data=self.data[idx])


@dataclass
class ImageSet:
    """N x C x H x W pixel tensors, values in [0, 1]."""

    ids: np.ndarray
    pixels: np.ndarray

    def __post_init__(self):
        self.ids = _check_ids(self.ids)
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 4:
            raise ValidationError(f"pixels must be 4-d (N,C,H,W), got shape {self.pixels.shape}")
        if self.n < 1:
            raise ValidationError("empty image set")
        if len(self.ids) != self.n:
            raise ValidationError(f"{len(self.ids)} ids for {self.n} images")
        if not np.all(np.isfinite(self.pixels)):
            raise ValidationError("pixel data contains non-finite values")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValidationError("pixel values must lie in [0, 1]")

    @property
    def n(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple:
        """(C, H, W) of a single image."""
        return tuple(self.pixels.shape[1:])

    def subset(self, idx) -> "ImageSet":
        idx = np.asarray(idx, dtype=np.int64)
        return ImageSet(ids=self.ids[idx], pixels=self.pixels[idx])


@dataclass
class LabelSet:
    """Per-item sets of non-negative integer labels (multi-label allowed)."""

    ids: np.ndarray
    labels: tuple
    _by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.ids = _check_ids(self.ids)
        labels = tuple(frozenset(int(v) for v in ls) for ls in self.labels)
        if len(labels) != len(self.ids):
            raise ValidationError(f"{len(labels)} label sets for {len(self.ids)} ids")
        for ls in labels:
            if not ls:
                raise ValidationError("empty label set")
            if any(v < 0 for v in ls):
                raise ValidationError("labels must be non-negative")
        self.labels = labels
        self._by_id = {int(i): ls for i, ls in zip(self.ids, labels)}

    @property
    def n(self) -> int:
        return len(self.ids)

    def labels_for(self, item_id: int) -> frozenset:
        try:
            return self._by_id[int(item_id)]
        except KeyError:
            raise ValidationError(f"no labels recorded for item {item_id}") from None

    def share_label(self, id_a: int, id_b: int) -> bool:
        return bool(self.labels_for(id_a) & self.labels_for(id_b))

    def subset(self, idx) -> "LabelSet":
        idx = np.asarray(idx, dtype=np.int64)
        return LabelSet(ids=self.ids[idx], labels=tuple(self.labels[int(k)] for k in idx))


@dataclass
class CodeSet:
    """N bit-packed binary codes of n_bits each.

    Word layout: bit k of word k // 64 is (b_k + 1) / 2, i.e. a set bit
    encodes code value +1.  High bits beyond n_bits are zero.
    """

    ids: np.ndarray
    words: np.ndarray
    n_bits: int

    def __post_init__(self):
        self.ids = _check_ids(self.ids)
        self.words = np.asarray(self.words, dtype=np.uint64)
        self.n_bits = int(self.n_bits)
        if self.n_bits < 1:
            raise ValidationError("code length must be at least 1 bit")
        if self.words.ndim != 2:
            raise ValidationError(f"code words must be 2-d, got shape {self.words.shape}")
        expect = words_per_code(self.n_bits)
        if self.words.shape[1] != expect:
            raise ValidationError(
                f"{self.words.shape[1]} words per code, expected {expect} for {self.n_bits} bits"
            )
        if len(self.ids) != self.n:
            raise ValidationError(f"{len(self.ids)} ids for {self.n} codes")
        tail = self.n_bits % 64
        if tail:
            mask = ~((np.uint64(1) << np.uint64(tail)) - np.uint64(1))
            if np.any(self.words[:, -1] & mask):
                raise ValidationError("unused high bits of the last code word must be zero")

    @property
    def n(self) -> int:
        return self.words.shape[0]


def words_per_code(n_bits: int) -> int:
    return (n_bits + 63) // 64


@dataclass
class NeighborList:
    """Ranked neighbor indices for one item (most similar first)."""

    owner: int
    neighbors: tuple

    def __post_init__(self):
        self.owner = int(self.owner)
        self.neighbors = tuple(int(j) for j in self.neighbors)
        if self.owner in self.neighbors:
            raise ValidationError(f"item {self.owner} appears in its own neighbor list")
        if len(set(self.neighbors)) != len(self.neighbors):
            raise ValidationError(f"duplicate entries in neighbor list of item {self.owner}")


@dataclass
class NeighborhoodMatrix:
    """Symmetric +-1 similarity structure, stored by its positive pairs.

    positive_pairs holds (i, j) with i < j for every s_ij = +1 off-diagonal
    entry; everything else is -1.  The diagonal is +1 by convention but
    self-pairs are excluded from all loss and precision sums.
    """

    n: int
    positive_pairs: frozenset

    def __post_init__(self):
        self.n = int(self.n)
        if self.n < 1:
            raise ValidationError("neighborhood matrix needs at least one item")
        pairs = set()
        for i, j in self.positive_pairs:
            i, j = int(i), int(j)
            if i == j:
                raise ValidationError("self-pairs are implicit and may not be stored")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValidationError(f"pair ({i},{j}) outside index range 0..{self.n - 1}")
            pairs.add((min(i, j), max(i, j)))
        self.positive_pairs = frozenset(pairs)

    @property
    def n_positive(self) -> int:
        return len(self.positive_pairs)

    def is_positive(self, i: int, j: int) -> bool:
        if i == j:
            return True
        return (min(i, j), max(i, j)) in self.positive_pairs

    def value(self, i: int, j: int) -> int:
        return 1 if self.is_positive(i, j) else -1

    def dense(self) -> np.ndarray:
        """Full +-1 matrix (diagonal +1); for tests and small-n inspection."""
        s = -np.ones((self.n, self.n), dtype=np.int8)
        np.fill_diagonal(s, 1)
        for i, j in self.positive_pairs:
            s[i, j] = 1
            s[j, i] = 1
        return s

    def submatrix(self, idx) -> np.ndarray:
        """+-1 matrix over the given item indices (for minibatch loss)."""
        idx = np.asarray(idx, dtype=np.int64)
        s = -np.ones((len(idx), len(idx)), dtype=np.int8)
        for a in range(len(idx)):
            for b in range(len(idx)):
                if self.is_positive(int(idx[a]), int(idx[b])):
                    s[a, b] = 1
        return s
