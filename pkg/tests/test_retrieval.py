"""Hamming distance exactness and ranking order contracts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ganhash.continuation import pack_codes, unpack_codes
from ganhash.datatypes import ValidationError
from ganhash.retrieval import (
    HammingIndex,
    hamming_distance,
    pairwise_distances,
    popcount,
    scan_throughput,
)
from naive_oracles import naive_hamming


def random_codes(rng, n, bits):
    b = rng.choice((-1, 1), size=(n, bits)).astype(np.int8)
    return pack_codes(np.arange(n), b, bits), b


class TestDistance:
    def test_popcount_values(self):
        w = np.array([0, 1, 0b1011, 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
        assert popcount(w).tolist() == [0, 1, 3, 64]

    def test_four_bit_fixture(self):
        a = np.array([0b1011], dtype=np.uint64)
        b = np.array([0b0010], dtype=np.uint64)
        assert hamming_distance(a, b, 4) == 2

    def test_self_distance_zero(self, rng):
        cs, _ = random_codes(rng, 5, 48)
        for row in cs.words:
            assert hamming_distance(row, row, 48) == 0

    def test_matches_bit_loop_for_ragged_lengths(self, rng):
        for bits in (1, 7, 12, 48, 63, 64, 65, 130):
            cs, raw = random_codes(rng, 6, bits)
            for i in range(6):
                for j in range(6):
                    want = naive_hamming(raw[i], raw[j])
                    assert hamming_distance(cs.words[i], cs.words[j], bits) == want

    def test_mask_ignores_stray_high_bits(self):
        a = np.array([0b0011], dtype=np.uint64)
        dirty = np.array([0b110011], dtype=np.uint64)  # same low 4 bits, junk above
        assert hamming_distance(a, dirty, 4) == 0

    def test_inner_product_identity(self, rng):
        # for +-1 codes of length L, dot(a, b) = L - 2 * hamming(a, b)
        cs, raw = random_codes(rng, 20, 8)
        for i in range(20):
            for j in range(20):
                d = hamming_distance(cs.words[i], cs.words[j], 8)
                assert int(raw[i] @ raw[j]) == 8 - 2 * d

    def test_identity_fixture_from_dot(self):
        a = np.array([1, 1, 1, 1, -1, -1, -1, -1], dtype=np.int8)
        b = np.array([1, 1, 1, 1, -1, 1, 1, 1], dtype=np.int8)
        cs = pack_codes([0, 1], np.stack([a, b]), 8)
        d = hamming_distance(cs.words[0], cs.words[1], 8)
        assert d == 3 and int(a @ b) == 2

    def test_metric_properties(self, rng):
        cs, _ = random_codes(rng, 30, 20)
        w = cs.words
        for _ in range(200):
            i, j, k = rng.integers(0, 30, size=3)
            dij = hamming_distance(w[i], w[j], 20)
            dji = hamming_distance(w[j], w[i], 20)
            dik = hamming_distance(w[i], w[k], 20)
            dkj = hamming_distance(w[k], w[j], 20)
            assert dij == dji
            assert dij <= dik + dkj
        dup = pack_codes([0, 1], np.ones((2, 20), dtype=np.int8), 20)
        assert hamming_distance(dup.words[0], dup.words[1], 20) == 0

    def test_word_count_mismatch(self):
        a = np.zeros(1, dtype=np.uint64)
        b = np.zeros(2, dtype=np.uint64)
        with pytest.raises(ValidationError, match="word"):
            hamming_distance(a, b, 64)

    def test_pairwise_matches_scalar(self, rng):
        ca, raw_a = random_codes(rng, 7, 65)
        cb, raw_b = random_codes(rng, 5, 65)
        mat = pairwise_distances(ca.words, cb.words, 65)
        assert mat.shape == (7, 5)
        for i in range(7):
            for j in range(5):
                assert mat[i, j] == naive_hamming(raw_a[i], raw_b[j])


class TestRanking:
    def test_tie_breaks_by_id(self):
        db = np.array([[0b1100], [0b1010], [0b0110]], dtype=np.uint64)
        cs = pack_codes(
            [0, 1, 2], np.stack([unpack_row(w, 4) for w in db]), 4
        )
        idx = HammingIndex(cs)
        r = idx.rank_all(cs.words[1])
        # item 1 at distance 0; items 0 and 2 both at distance 2
        assert r.item_ids.tolist() == [1, 0, 2]
        assert r.distances.tolist() == [0, 2, 2]

    def test_query_in_database_ranks_first(self, rng):
        cs, _ = random_codes(rng, 50, 16)
        idx = HammingIndex(cs)
        for q in (0, 17, 49):
            r = idx.rank_all(cs.words[q])
            assert r.distances[0] == 0
            assert q in r.item_ids[r.distances == 0]

    def test_rank_is_permutation(self, rng):
        cs, _ = random_codes(rng, 40, 12)
        idx = HammingIndex(cs)
        r = idx.rank_all(cs.words[3])
        assert sorted(r.item_ids.tolist()) == list(range(40))

    def test_matches_float_inner_product_oracle(self, rng):
        # descending dot-product order with id ties equals ascending distance order
        cs, raw = random_codes(rng, 300, 12)
        idx = HammingIndex(cs)
        for q in range(0, 300, 37):
            r = idx.rank_all(cs.words[q])
            dots = raw @ raw[q].astype(np.float64)
            want = np.lexsort((np.arange(300), -dots))
            assert r.item_ids.tolist() == want.tolist()

    def test_top_k_prefix_property(self, rng):
        cs, _ = random_codes(rng, 25, 10)
        idx = HammingIndex(cs)
        q = cs.words[4]
        full = idx.rank_all(q)
        for k in range(1, 25):
            top = idx.top_k(q, k)
            assert top.item_ids.tolist() == full.item_ids[:k].tolist()
            nxt = idx.top_k(q, k + 1)
            assert nxt.item_ids[:k].tolist() == top.item_ids.tolist()
        assert idx.top_k(q, 25).item_ids.tolist() == full.item_ids.tolist()

    def test_top_k_bounds(self, rng):
        cs, _ = random_codes(rng, 5, 8)
        idx = HammingIndex(cs)
        with pytest.raises(ValidationError, match="k="):
            idx.top_k(cs.words[0], 6)
        with pytest.raises(ValidationError, match="k="):
            idx.top_k(cs.words[0], 0)

    def test_query_shape_checked(self, rng):
        cs, _ = random_codes(rng, 5, 8)
        idx = HammingIndex(cs)
        with pytest.raises(ValidationError, match="query"):
            idx.distances(np.zeros(2, dtype=np.uint64))

    def test_ranked_result_validation(self):
        with pytest.raises(ValidationError, match="non-decreasing"):
            from ganhash.retrieval import RankedResult

            RankedResult(item_ids=np.array([0, 1]), distances=np.array([3, 1]))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 40), st.integers(1, 30))
    def test_rank_deterministic(self, seed, n, bits):
        rng = np.random.default_rng(seed)
        cs, _ = random_codes(rng, n, bits)
        idx_a, idx_b = HammingIndex(cs), HammingIndex(cs)
        q = cs.words[n // 2]
        ra, rb = idx_a.rank_all(q), idx_b.rank_all(q)
        assert ra.item_ids.tolist() == rb.item_ids.tolist()


def unpack_row(word, bits):
    out = np.empty(bits, dtype=np.int8)
    w = int(word[0])
    for k in range(bits):
        out[k] = 1 if (w >> k) & 1 else -1
    return out


class TestThroughput:
    def test_reports_positive_rate(self, rng):
        cs, _ = random_codes(rng, 200, 48)
        idx = HammingIndex(cs)
        stats = scan_throughput(idx, cs.words[:10], repeats=2)
        assert stats["comparisons"] == 2 * 10 * 200
        assert stats["comparisons_per_sec"] > 0
