import math

import numpy as np
import pytest

import oracles
from nrqhash.dataio import BinaryCodeMatrix, LabelSet, pack_codes
from nrqhash.metrics import (
    ANY_SHARED_LABEL,
    SINGLE_LABEL,
    RelevanceRule,
    average_precision,
    evaluate,
    precision_at,
)
from nrqhash.search import CodeDatabase, RankedList, rank_all


def _ranking(ids, distances=None):
    ids = np.asarray(ids, dtype=np.int64)
    if distances is None:
        distances = np.arange(ids.size, dtype=np.int64)
    return RankedList(ids=ids, distances=np.asarray(distances, dtype=np.int64))


def _singletons(values):
    return LabelSet(tuple(frozenset((int(v),)) for v in values))


class TestAveragePrecision:
    def test_all_relevant(self):
        labels = _singletons([1, 1, 1, 1])
        assert average_precision(_ranking([0, 1, 2, 3]), frozenset({1}), labels, SINGLE_LABEL) == 1.0

    def test_single_relevant_at_rank_three(self):
        labels = _singletons([0, 0, 1, 0, 0])
        ap = average_precision(_ranking([0, 1, 2, 3, 4]), frozenset({1}), labels, SINGLE_LABEL)
        assert ap == pytest.approx(1.0 / 3.0)

    def test_hand_case_ranks_one_and_three(self):
        # relevant at ranks {1, 3} of 4: AP = (1/1 + 2/3) / 2 = 5/6
        labels = _singletons([1, 0, 1, 0])
        ap = average_precision(_ranking([0, 1, 2, 3]), frozenset({1}), labels, SINGLE_LABEL)
        assert ap == pytest.approx(5.0 / 6.0, abs=1e-15)

    def test_no_relevant_returns_zero(self):
        labels = _singletons([0, 0])
        assert average_precision(_ranking([0, 1]), frozenset({9}), labels, SINGLE_LABEL) == 0.0

    def test_multilabel_shared_rule(self):
        labels = LabelSet((frozenset({1, 2}), frozenset({3}), frozenset({2, 5})))
        ap = average_precision(_ranking([0, 1, 2]), frozenset({2, 7}), labels, ANY_SHARED_LABEL)
        # relevant at ranks 1 and 3
        assert ap == pytest.approx((1.0 + 2.0 / 3.0) / 2.0)

    def test_ap_is_one_iff_relevant_first(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(3, 12))
            flags = rng.random(n) < 0.5
            if not flags.any():
                continue
            labels = _singletons(np.where(flags, 1, 0))
            ap = average_precision(_ranking(np.arange(n)), frozenset({1}), labels, SINGLE_LABEL)
            sorted_first = bool(np.all(np.diff(flags.astype(int)) <= 0))
            assert (ap == 1.0) == sorted_first

    def test_bounds(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            n = int(rng.integers(2, 20))
            labels = _singletons(rng.integers(0, 3, n))
            ap = average_precision(
                _ranking(rng.permutation(n)), frozenset({1}), labels, SINGLE_LABEL
            )
            assert 0.0 <= ap <= 1.0

    def test_label_count_mismatch(self):
        labels = _singletons([1, 0])
        with pytest.raises(ValueError, match="labels"):
            average_precision(_ranking([0, 1, 2]), frozenset({1}), labels, SINGLE_LABEL)


class TestPrecisionAt:
    def test_all_relevant_top(self):
        labels = _singletons([1, 1, 0, 0])
        assert precision_at(_ranking([0, 1, 2, 3]), 2, frozenset({1}), labels, SINGLE_LABEL) == 1.0

    def test_none_relevant_top(self):
        labels = _singletons([0, 0, 1, 1])
        assert precision_at(_ranking([0, 1, 2, 3]), 2, frozenset({1}), labels, SINGLE_LABEL) == 0.0

    def test_half_relevant(self):
        labels = _singletons([1, 0, 1, 0])
        assert precision_at(_ranking([0, 1, 2, 3]), 4, frozenset({1}), labels, SINGLE_LABEL) == 0.5

    def test_m_out_of_range(self):
        labels = _singletons([1, 0])
        with pytest.raises(ValueError, match="M"):
            precision_at(_ranking([0, 1]), 3, frozenset({1}), labels, SINGLE_LABEL)

    def test_nonincreasing_when_relevant_first(self):
        labels = _singletons([1, 1, 1, 0, 0, 0])
        ranking = _ranking([0, 1, 2, 3, 4, 5])
        values = [
            precision_at(ranking, m, frozenset({1}), labels, SINGLE_LABEL) for m in range(1, 7)
        ]
        assert all(b <= a for a, b in zip(values, values[1:]))


def _random_instance(rng, n_q, n_db, k, n_classes, multilabel):
    q_signs = np.where(rng.standard_normal((n_q, k)) >= 0, 1.0, -1.0)
    db_signs = np.where(rng.standard_normal((n_db, k)) >= 0, 1.0, -1.0)
    if multilabel:
        def draw():
            size = int(rng.integers(1, 3))
            return frozenset(int(v) for v in rng.choice(n_classes, size=size, replace=False))

        q_labels = LabelSet(tuple(draw() for _ in range(n_q)))
        db_labels = LabelSet(tuple(draw() for _ in range(n_db)))
    else:
        q_labels = _singletons(rng.integers(0, n_classes, n_q))
        db_labels = _singletons(rng.integers(0, n_classes, n_db))
    return q_signs, q_labels, db_signs, db_labels


def _evaluate_naive(q_signs, q_labels, db_signs, db_labels, rule_kind, marks):
    """From-scratch scalar re-implementation of the whole evaluation."""
    n_db = db_signs.shape[0]
    aps, skipped = [], 0
    precisions = {m: [] for m in marks}
    for qi in range(q_signs.shape[0]):
        dist = [oracles.hamming_naive(q_signs[qi], db_signs[i]) for i in range(n_db)]
        ranked = [i for _, i in sorted((d, i) for i, d in enumerate(dist))]
        ap = oracles.average_precision_naive(
            ranked, q_labels.labels[qi], db_labels.labels, rule_kind
        )
        for m in marks:
            precisions[m].append(
                oracles.precision_at_naive(ranked, m, q_labels.labels[qi], db_labels.labels, rule_kind)
            )
        relevant = any(
            (q_labels.labels[qi] == s if rule_kind == "single_label" else q_labels.labels[qi] & s)
            for s in db_labels.labels
        )
        if relevant:
            aps.append(ap)
        else:
            skipped += 1
    mean_ap = sum(aps) / len(aps) if aps else 0.0
    mean_prec = {m: sum(v) / len(v) for m, v in precisions.items()}
    return mean_ap, mean_prec, skipped


class TestEvaluate:
    def test_perfectly_separated_classes(self):
        signs = np.array([[1.0] * 8] * 5 + [[-1.0] + [1.0] * 7] * 5)
        labels = _singletons([0] * 5 + [1] * 5)
        q_signs = np.array([[1.0] * 8, [-1.0] + [1.0] * 7])
        q_labels = _singletons([0, 1])
        db = CodeDatabase(pack_codes(BinaryCodeMatrix(signs)), np.arange(10))
        report = evaluate(
            pack_codes(BinaryCodeMatrix(q_signs)), q_labels, db, labels, SINGLE_LABEL,
            precision_marks=[1, 5],
        )
        assert report.map == 1.0
        assert report.precision_at[5] == 1.0

    def test_single_query_single_relevant_first(self):
        db_signs = np.array([[1.0, 1.0], [-1.0, -1.0], [-1.0, 1.0]])
        db = CodeDatabase(pack_codes(BinaryCodeMatrix(db_signs)), np.arange(3))
        report = evaluate(
            pack_codes(BinaryCodeMatrix(np.array([[1.0, 1.0]]))),
            _singletons([7]),
            db,
            _singletons([7, 1, 2]),
            SINGLE_LABEL,
            precision_marks=[1],
        )
        assert report.map == 1.0
        assert report.precision_at[1] == 1.0

    @pytest.mark.parametrize("multilabel", [False, True])
    def test_matches_naive_oracle(self, multilabel):
        rng = np.random.default_rng(2)
        rule = ANY_SHARED_LABEL if multilabel else SINGLE_LABEL
        for _ in range(20):
            n_q = int(rng.integers(1, 8))
            n_db = int(rng.integers(4, 30))
            k = int(rng.integers(1, 12))
            q_signs, q_labels, db_signs, db_labels = _random_instance(
                rng, n_q, n_db, k, 3, multilabel
            )
            marks = [1, min(3, n_db)]
            db = CodeDatabase(pack_codes(BinaryCodeMatrix(db_signs)), np.arange(n_db))
            report = evaluate(
                pack_codes(BinaryCodeMatrix(q_signs)), q_labels, db, db_labels, rule,
                precision_marks=marks,
            )
            mean_ap, mean_prec, skipped = _evaluate_naive(
                q_signs, q_labels, db_signs, db_labels, rule.kind, marks
            )
            assert report.map == pytest.approx(mean_ap, abs=1e-12)
            assert report.num_queries_without_relevant == skipped
            for m in marks:
                assert report.precision_at[m] == pytest.approx(mean_prec[m], abs=1e-12)

    def test_map_equals_mean_of_per_query_ap(self):
        rng = np.random.default_rng(3)
        q_signs, q_labels, db_signs, db_labels = _random_instance(rng, 6, 25, 8, 3, False)
        db = CodeDatabase(pack_codes(BinaryCodeMatrix(db_signs)), np.arange(25))
        report = evaluate(pack_codes(BinaryCodeMatrix(q_signs)), q_labels, db, db_labels, SINGLE_LABEL)
        assert report.map == pytest.approx(
            math.fsum(report.per_query_ap) / len(report.per_query_ap), abs=1e-12
        )

    def test_map_invariant_under_query_permutation(self):
        rng = np.random.default_rng(4)
        q_signs, q_labels, db_signs, db_labels = _random_instance(rng, 7, 20, 6, 3, False)
        db = CodeDatabase(pack_codes(BinaryCodeMatrix(db_signs)), np.arange(20))
        report = evaluate(pack_codes(BinaryCodeMatrix(q_signs)), q_labels, db, db_labels, SINGLE_LABEL)
        perm = rng.permutation(7)
        report_p = evaluate(
            pack_codes(BinaryCodeMatrix(q_signs[perm])),
            LabelSet(tuple(q_labels.labels[i] for i in perm)),
            db,
            db_labels,
            SINGLE_LABEL,
        )
        assert report.map == pytest.approx(report_p.map, abs=1e-12)

    def test_macro_map_per_class_average(self):
        # hand-ranked: both class-0 queries hit their item at rank 1 (AP 1);
        # the class-1 query ranks id 2 first, then ties id 1 before id 3 by
        # the ascending-id rule, so its relevant item sits at rank 3 (AP 1/3).
        # plain mAP averages queries, macro averages the two class means.
        db_signs = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, -1.0], [-1.0, 1.0]])
        db_labels = _singletons([0, 9, 9, 1])
        q_signs = np.array([[1.0, 1.0], [1.0, 1.0], [-1.0, -1.0]])
        q_labels = _singletons([0, 0, 1])
        db = CodeDatabase(pack_codes(BinaryCodeMatrix(db_signs)), np.arange(4))
        report = evaluate(
            pack_codes(BinaryCodeMatrix(q_signs)), q_labels, db, db_labels, SINGLE_LABEL, macro=True
        )
        assert report.map == pytest.approx((1.0 + 1.0 + 1.0 / 3.0) / 3.0)
        assert report.macro_map == pytest.approx((1.0 + 1.0 / 3.0) / 2.0)

    def test_macro_rejected_for_multilabel(self):
        rng = np.random.default_rng(5)
        q_signs, q_labels, db_signs, db_labels = _random_instance(rng, 3, 10, 4, 3, True)
        db = CodeDatabase(pack_codes(BinaryCodeMatrix(db_signs)), np.arange(10))
        with pytest.raises(ValueError, match="macro"):
            evaluate(
                pack_codes(BinaryCodeMatrix(q_signs)), q_labels, db, db_labels,
                ANY_SHARED_LABEL, macro=True,
            )

    def test_empty_queries_rejected(self):
        rng = np.random.default_rng(6)
        _, _, db_signs, db_labels = _random_instance(rng, 1, 10, 4, 3, False)
        db = CodeDatabase(pack_codes(BinaryCodeMatrix(db_signs)), np.arange(10))
        from nrqhash.dataio import PackedCodes

        with pytest.raises(ValueError):
            evaluate(
                PackedCodes(np.zeros((0, 1), dtype=np.uint8), 4),
                db_labels, db, db_labels, SINGLE_LABEL,
            )

    def test_rule_validation(self):
        with pytest.raises(ValueError, match="rule"):
            RelevanceRule("sometimes")
