"""Retrieval quality: average precision, mAP, macro-mAP, and precision@M.

Average precision is computed over the full ranking. Queries with no
relevant database item get AP 0 from ``average_precision`` and are excluded
from the mAP mean (the report counts them separately); ``RetrievalReport.map``
therefore equals the mean of ``per_query_ap`` exactly. Precision@M means run
over all queries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataio import LabelSet, PackedCodes
from .search import CodeDatabase, RankedList, rank_all


@dataclass(frozen=True)
class RelevanceRule:
    """single_label: equal singleton labels; any_shared_label: non-empty intersection."""

    kind: str

    def __post_init__(self):
        if self.kind not in ("single_label", "any_shared_label"):
            raise ValueError(f"unknown relevance rule {self.kind!r}")

    def relevant(self, query_labels: frozenset, item_labels: frozenset) -> bool:
        if self.kind == "single_label":
            if len(query_labels) != 1 or len(item_labels) != 1:
                raise ValueError("single_label relevance needs singleton label sets")
            return query_labels == item_labels
        return not query_labels.isdisjoint(item_labels)


SINGLE_LABEL = RelevanceRule("single_label")
ANY_SHARED_LABEL = RelevanceRule("any_shared_label")


@dataclass(frozen=True)
class RetrievalReport:
    map: float
    macro_map: float | None
    precision_at: dict
    per_query_ap: tuple
    included_queries: tuple
    num_queries: int
    num_queries_without_relevant: int


def _relevance_flags(ranking: RankedList, query_labels, db_labels: LabelSet, rule: RelevanceRule):
    if len(ranking) != db_labels.n:
        raise ValueError(f"ranking covers {len(ranking)} items but there are {db_labels.n} labels")
    return [rule.relevant(query_labels, db_labels.labels[i]) for i in ranking.ids.tolist()]


def average_precision(ranking: RankedList, query_labels, db_labels: LabelSet, rule: RelevanceRule) -> float:
    """Mean of precision-at-hit over relevant positions; 0 if nothing is relevant.

    Ranked ids are taken as indices into the database label set.
    """
    flags = _relevance_flags(ranking, query_labels, db_labels, rule)
    total = sum(flags)
    if total == 0:
        return 0.0
    hits = 0
    terms = []
    for pos, flag in enumerate(flags, start=1):
        if flag:
            hits += 1
            terms.append(hits / pos)
    return math.fsum(terms) / total


def precision_at(ranking: RankedList, m: int, query_labels, db_labels: LabelSet, rule: RelevanceRule) -> float:
    """Fraction of relevant items among the top m."""
    if not 1 <= m <= len(ranking):
        raise ValueError(f"need 1 <= M <= {len(ranking)}, got M={m}")
    flags = _relevance_flags(ranking, query_labels, db_labels, rule)
    return sum(flags[:m]) / m


def evaluate(
    query_codes: PackedCodes,
    query_labels: LabelSet,
    db: CodeDatabase,
    db_labels: LabelSet,
    rule: RelevanceRule,
    precision_marks=(),
    macro: bool = False,
) -> RetrievalReport:
    """Rank every query against the database and reduce to the reported metrics.

    The caller is responsible for keeping queries out of the database.
    Macro-mAP (per-class mean of mAP) is only defined under the single-label
    rule; classes are the labels of queries that have at least one relevant
    item.
    """
    if query_codes.n < 1:
        raise ValueError("empty query set")
    if query_codes.nbits != db.nbits:
        raise ValueError(f"query codes have {query_codes.nbits} bits, database has {db.nbits}")
    if query_labels.n != query_codes.n:
        raise ValueError(f"{query_codes.n} queries but {query_labels.n} query labels")
    if db_labels.n != db.n:
        raise ValueError(f"database has {db.n} codes but {db_labels.n} labels")
    if db.ids.min() < 0 or db.ids.max() >= db_labels.n:
        raise ValueError("database ids must index the database label set")
    if macro and rule.kind != "single_label":
        raise ValueError("macro-mAP is only defined under the single-label rule")
    marks = sorted(set(int(m) for m in precision_marks))
    for m in marks:
        if not 1 <= m <= db.n:
            raise ValueError(f"precision mark {m} outside 1..{db.n}")

    included = []
    aps = []
    prec_sums = {m: [] for m in marks}
    skipped = 0
    for qi in range(query_codes.n):
        ranking = rank_all(query_codes.packed[qi], db)
        flags = _relevance_flags(ranking, query_labels.labels[qi], db_labels, rule)
        total = sum(flags)
        for m in marks:
            prec_sums[m].append(sum(flags[:m]) / m)
        if total == 0:
            skipped += 1
            continue
        hits = 0
        terms = []
        for pos, flag in enumerate(flags, start=1):
            if flag:
                hits += 1
                terms.append(hits / pos)
        included.append(qi)
        aps.append(math.fsum(terms) / total)

    mean_ap = math.fsum(aps) / len(aps) if aps else 0.0
    macro_map = None
    if macro:
        by_class = {}
        for qi, ap in zip(included, aps):
            (label,) = query_labels.labels[qi]
            by_class.setdefault(label, []).append(ap)
        if by_class:
            class_means = [math.fsum(v) / len(v) for _, v in sorted(by_class.items())]
            macro_map = math.fsum(class_means) / len(class_means)
        else:
            macro_map = 0.0

    return RetrievalReport(
        map=mean_ap,
        macro_map=macro_map,
        precision_at={m: math.fsum(vals) / len(vals) for m, vals in prec_sums.items()},
        per_query_ap=tuple(aps),
        included_queries=tuple(included),
        num_queries=query_codes.n,
        num_queries_without_relevant=skipped,
    )
