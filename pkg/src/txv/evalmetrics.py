"""Retrieval evaluation: R@k, median rank, AP/mAP, MRR."""

import json
import statistics
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Set

from .errors import EvalError
from .retrieval import RankedList

GroundTruth = Dict[str, Set[str]]

DEFAULT_KS = (1, 5, 10)


def _best_relevant_rank(lst: RankedList, relevant: Set[str]) -> int:
    best = None
    for e in lst.entries:
        if e.item_id in relevant:
            best = e.rank if best is None else min(best, e.rank)
    if best is None:
        raise EvalError(
            f"query {lst.query_id!r}: no relevant item appears in the ranked list"
        )
    return best


def recall_at_k(lst: RankedList, relevant: Set[str], k: int) -> float:
    """|relevant in top-k| / |relevant| (the hit indicator for one positive)."""
    if not relevant:
        raise EvalError(f"query {lst.query_id!r}: empty relevant set")
    if k < 1:
        raise ValueError("k must be >= 1")
    hits = sum(1 for e in lst.entries if e.rank <= k and e.item_id in relevant)
    return hits / len(relevant)


def average_precision(lst: RankedList, relevant: Set[str]) -> float:
    if not relevant:
        raise EvalError(f"query {lst.query_id!r}: empty relevant set")
    hits = 0
    acc = 0.0
    for e in lst.entries:
        if e.item_id in relevant:
            hits += 1
            acc += hits / e.rank
    if hits == 0:
        raise EvalError(
            f"query {lst.query_id!r}: no relevant item appears in the ranked list"
        )
    return acc / len(relevant)


def median_rank(lists: Sequence[RankedList], gt: GroundTruth) -> float:
    """Median over queries of the best relevant rank (even count: mean of middle two)."""
    best = []
    for lst in lists:
        if lst.query_id not in gt:
            raise EvalError(f"no ground truth for query {lst.query_id!r}")
        best.append(_best_relevant_rank(lst, gt[lst.query_id]))
    if not best:
        raise EvalError("no queries to evaluate")
    return float(statistics.median(best))


@dataclass
class MetricReport:
    per_query: Dict[str, Dict[str, float]] = field(default_factory=dict)
    aggregate: Dict[str, float] = field(default_factory=dict)
    query_count: int = 0
    ks: Sequence[int] = DEFAULT_KS

    def to_tsv(self, path) -> None:
        cols = [f"r@{k}" for k in self.ks] + ["best_rank", "ap", "mrr"]
        agg_cols = [f"r@{k}" for k in self.ks] + ["medr", "map", "mrr"]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("query\t" + "\t".join(cols) + "\n")
            for qid in self.per_query:
                row = self.per_query[qid]
                fh.write(qid + "\t" + "\t".join(f"{row[c]:.9g}" for c in cols) + "\n")
            fh.write("ALL\t" + "\t".join(f"{self.aggregate[c]:.9g}" for c in agg_cols) + "\n")

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "per_query": self.per_query,
                    "aggregate": self.aggregate,
                    "query_count": self.query_count,
                    "ks": list(self.ks),
                },
                fh,
                indent=2,
                sort_keys=True,
            )


def evaluate(
    lists: Sequence[RankedList], gt: GroundTruth, ks: Sequence[int] = DEFAULT_KS
) -> MetricReport:
    """Unweighted per-query means (median for MedR); order-invariant."""
    if not lists:
        raise EvalError("no ranked lists to evaluate")
    uncovered = [lst.query_id for lst in lists if lst.query_id not in gt]
    if uncovered:
        raise EvalError(f"queries without ground truth: {uncovered}")
    report = MetricReport(ks=tuple(ks))
    for lst in sorted(lists, key=lambda l: l.query_id):
        relevant = gt[lst.query_id]
        best = _best_relevant_rank(lst, relevant)
        row = {f"r@{k}": recall_at_k(lst, relevant, k) for k in ks}
        row["best_rank"] = float(best)
        row["ap"] = average_precision(lst, relevant)
        row["mrr"] = 1.0 / best
        report.per_query[lst.query_id] = row
    n = len(report.per_query)
    report.query_count = n
    for k in ks:
        report.aggregate[f"r@{k}"] = sum(r[f"r@{k}"] for r in report.per_query.values()) / n
    report.aggregate["medr"] = float(
        statistics.median(r["best_rank"] for r in report.per_query.values())
    )
    report.aggregate["map"] = sum(r["ap"] for r in report.per_query.values()) / n
    report.aggregate["mrr"] = sum(r["mrr"] for r in report.per_query.values()) / n
    return report
