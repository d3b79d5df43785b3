"""Pseudo-similarity construction from features or labels.

The unsupervised path ranks items by cosine similarity, keeps the top k1
as each item's neighbor list, then enlarges the lists by pooling the
neighbor lists that overlap each item's own list the most (top k2 by
intersection size).  Positive pairs from the direct lists and from the
pooled lists together define a symmetric +-1 matrix; everything not
declared positive is a negative pair.

All ranking ties resolve by ascending item index so the result is a pure
function of the input.  The matrix is built once and frozen; training
never updates it.
"""

from __future__ import annotations

import numpy as np

from .datatypes import (
    FeatureSet,
    LabelSet,
    NeighborhoodMatrix,
    NeighborList,
    ValidationError,
)


def cosine_knn(fs: FeatureSet, k: int):
    """Top-k neighbor list per item, most similar first, self excluded."""
    if not 0 <= k < fs.n:
        raise ValidationError(f"k must satisfy 0 <= k < {fs.n}, got {k}")
    x = fs.data.astype(np.float64)
    norms = np.linalg.norm(x, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValidationError(f"feature row for item {int(fs.ids[zero[0]])} has zero norm")
    xn = x / norms[:, None]
    sim = xn @ xn.T
    np.fill_diagonal(sim, -np.inf)
    out = []
    for i in range(fs.n):
        order = np.argsort(-sim[i], kind="stable")[:k]
        out.append(NeighborList(owner=i, neighbors=tuple(int(j) for j in order)))
    return tuple(out)


def _check_lists(lists):
    for i, nl in enumerate(lists):
        if nl.owner != i:
            raise ValidationError(f"list at position {i} owned by item {nl.owner}")
    return len(lists)


def build_s1(lists, n: int) -> NeighborhoodMatrix:
    """Direct-neighbor matrix: (i, j) positive iff either list contains the other."""
    if _check_lists(lists) != n:
        raise ValidationError(f"{len(lists)} lists for {n} items")
    pairs = set()
    for nl in lists:
        for j in nl.neighbors:
            pairs.add((min(nl.owner, j), max(nl.owner, j)))
    return NeighborhoodMatrix(n=n, positive_pairs=frozenset(pairs))


def expand_neighbors(lists, k2: int):
    """Pool the k2 lists sharing the most members with each item's own list.

    Candidates are all other items ranked by intersection size with the
    owner's list (ties by ascending index); the owner's own list is not a
    candidate but its members are.  The pooled list keeps first-seen order
    and drops the owner.
    """
    n = _check_lists(lists)
    if not 0 <= k2 <= n:
        raise ValidationError(f"k2 must satisfy 0 <= k2 <= {n}, got {k2}")
    member = np.zeros((n, n), dtype=np.int64)
    for nl in lists:
        member[nl.owner, list(nl.neighbors)] = 1
    overlap = member @ member.T
    out = []
    for i in range(n):
        order = np.lexsort((np.arange(n), -overlap[i]))
        picked = [int(j) for j in order if j != i][:k2]
        seen, pooled = set(), []
        for j in picked:
            for v in lists[j].neighbors:
                if v != i and v not in seen:
                    seen.add(v)
                    pooled.append(v)
        out.append(NeighborList(owner=i, neighbors=tuple(pooled)))
    return tuple(out)


def build_final_s(s1: NeighborhoodMatrix, lists, expanded) -> NeighborhoodMatrix:
    """Direct matrix unioned with the direct lists of each pooled neighbor.

    A pair (i, j) turns positive when j sits in the top-k1 list of any
    member of i's pooled list (or the mirror image of that), so positives
    reach two hops out from the original lists.
    """
    n = _check_lists(lists)
    if _check_lists(expanded) != n or s1.n != n:
        raise ValidationError("item counts disagree between matrix and lists")
    pairs = set(s1.positive_pairs)
    for nl in expanded:
        i = nl.owner
        for v in nl.neighbors:
            for j in lists[v].neighbors:
                if j != i:
                    pairs.add((min(i, j), max(i, j)))
    return NeighborhoodMatrix(n=n, positive_pairs=frozenset(pairs))


def build_neighborhood(fs: FeatureSet, k1: int, k2: int) -> NeighborhoodMatrix:
    """Full pipeline: cosine lists, pooling, union."""
    lists = cosine_knn(fs, k1)
    s1 = build_s1(lists, fs.n)
    if k2 == 0:
        return s1
    return build_final_s(s1, lists, expand_neighbors(lists, k2))


def build_from_labels(ls: LabelSet) -> NeighborhoodMatrix:
    """Supervised variant: items are similar iff their label sets intersect."""
    pairs = set()
    for i in range(ls.n):
        for j in range(i + 1, ls.n):
            if ls.labels[i] & ls.labels[j]:
                pairs.add((i, j))
    return NeighborhoodMatrix(n=ls.n, positive_pairs=frozenset(pairs))


def neighborhood_precision(s: NeighborhoodMatrix, ls: LabelSet) -> float:
    """Fraction of declared positive pairs that actually share a label."""
    if s.n != ls.n:
        raise ValidationError(f"matrix over {s.n} items but {ls.n} label sets")
    if not s.positive_pairs:
        raise ValidationError("undefined precision: no positive pairs")
    good = sum(1 for i, j in s.positive_pairs if ls.labels[i] & ls.labels[j])
    return good / s.n_positive
