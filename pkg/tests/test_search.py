import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from nrqhash.dataio import BinaryCodeMatrix, PackedCodes, pack_codes
from nrqhash.search import CodeDatabase, hamming, rank_all


def _pack_signs(signs):
    return pack_codes(BinaryCodeMatrix(signs))


def _random_signs(rng, n, k):
    return np.where(rng.standard_normal((n, k)) >= 0, 1.0, -1.0)


class TestHamming:
    def test_identical_codes(self):
        p = _pack_signs([[1.0, -1.0, 1.0]])
        assert hamming(p.packed[0], p.packed[0], 3) == 0

    def test_single_flip(self):
        a = _pack_signs([[1.0, -1.0, 1.0]])
        b = _pack_signs([[-1.0, -1.0, 1.0]])
        assert hamming(a.packed[0], b.packed[0], 3) == 1

    def test_naive_loop_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            sa = _random_signs(rng, 1, 13)
            sb = _random_signs(rng, 1, 13)
            pa, pb = _pack_signs(sa), _pack_signs(sb)
            expected = oracles.hamming_naive(sa[0], sb[0])
            assert hamming(pa.packed[0], pb.packed[0], 13) == expected

    def test_length_mismatch(self):
        a = _pack_signs([[1.0] * 8])
        b = _pack_signs([[1.0] * 16])
        with pytest.raises(ValueError, match="bytes"):
            hamming(a.packed[0], b.packed[0], 16)

    @settings(max_examples=50, deadline=None)
    @given(
        k=st.integers(min_value=1, max_value=40),
        seed=st.integers(min_value=0, max_value=2**31),
    )
    def test_metric_properties(self, k, seed):
        rng = np.random.default_rng(seed)
        sa, sb, sc = (_random_signs(rng, 1, k) for _ in range(3))
        pa, pb, pc = (_pack_signs(s).packed[0] for s in (sa, sb, sc))
        dab = hamming(pa, pb, k)
        dba = hamming(pb, pa, k)
        dac = hamming(pa, pc, k)
        dcb = hamming(pc, pb, k)
        assert dab == dba
        assert hamming(pa, pa, k) == 0
        assert (dab == 0) == bool(np.array_equal(sa, sb))
        assert dab <= dac + dcb


class TestRankAll:
    def test_query_in_database_ranks_first(self):
        rng = np.random.default_rng(1)
        signs = _random_signs(rng, 10, 16)
        db = CodeDatabase(_pack_signs(signs), np.arange(10))
        query = _pack_signs(signs[3:4]).packed[0]
        ranking = rank_all(query, db)
        assert ranking.distances[0] == 0
        assert 3 in ranking.ids[ranking.distances == 0]

    def test_all_equal_codes_tie_by_id(self):
        signs = np.ones((6, 5))
        db = CodeDatabase(_pack_signs(signs), np.array([9, 4, 7, 0, 2, 5]))
        query = _pack_signs(-np.ones((1, 5))).packed[0]
        ranking = rank_all(query, db)
        assert ranking.ids.tolist() == [0, 2, 4, 5, 7, 9]
        assert set(ranking.distances.tolist()) == {5}

    def test_matches_naive_sort(self):
        rng = np.random.default_rng(2)
        signs = _random_signs(rng, 50, 13)
        qsigns = _random_signs(rng, 1, 13)
        db = CodeDatabase(_pack_signs(signs), np.arange(50))
        ranking = rank_all(_pack_signs(qsigns).packed[0], db)
        naive = sorted(
            (oracles.hamming_naive(qsigns[0], signs[i]), i) for i in range(50)
        )
        assert [(d, i) for d, i in naive] == [
            (int(d), int(i)) for i, d in zip(ranking.ids, ranking.distances)
        ]

    def test_output_is_permutation_of_ids(self):
        rng = np.random.default_rng(3)
        signs = _random_signs(rng, 23, 9)
        ids = rng.permutation(100)[:23]
        db = CodeDatabase(_pack_signs(signs), ids)
        ranking = rank_all(_pack_signs(_random_signs(rng, 1, 9)).packed[0], db)
        assert sorted(ranking.ids.tolist()) == sorted(ids.tolist())

    def test_distances_nondecreasing_and_ties_ascending(self):
        rng = np.random.default_rng(4)
        signs = _random_signs(rng, 40, 6)
        db = CodeDatabase(_pack_signs(signs), np.arange(40))
        ranking = rank_all(_pack_signs(_random_signs(rng, 1, 6)).packed[0], db)
        pairs = list(zip(ranking.distances.tolist(), ranking.ids.tolist()))
        assert pairs == sorted(pairs)

    def test_bit_width_mismatch(self):
        rng = np.random.default_rng(5)
        db = CodeDatabase(_pack_signs(_random_signs(rng, 4, 16)), np.arange(4))
        query = _pack_signs(_random_signs(rng, 1, 8)).packed[0]
        with pytest.raises(ValueError):
            rank_all(query, db, nbits=8)


class TestCodeDatabase:
    def test_ids_must_be_unique(self):
        rng = np.random.default_rng(6)
        with pytest.raises(ValueError, match="unique"):
            CodeDatabase(_pack_signs(_random_signs(rng, 3, 4)), np.array([1, 1, 2]))

    def test_ids_length_checked(self):
        rng = np.random.default_rng(7)
        with pytest.raises(ValueError):
            CodeDatabase(_pack_signs(_random_signs(rng, 3, 4)), np.array([1, 2]))
