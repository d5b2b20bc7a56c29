"""Ranked lists, dual-softmax inference rescoring, rank-average fusion."""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import DimensionError, FusionError, NumericalError
from .featurebank import FeatureBank, save_bank, load_bank
from .model import TxVModel, bank_features, similarity_matrix
from .numerics import Axis, softmax


@dataclass
class RankEntry:
    rank: int
    item_id: str
    score: float


@dataclass
class RankedList:
    """Ordered retrieval result for one query.

    ``ascending`` marks lists whose scores grow with rank (mean-rank fused
    lists); plain similarity lists have non-increasing scores.
    """

    query_id: str
    entries: List[RankEntry] = field(default_factory=list)
    ascending: bool = False

    def item_ids(self) -> List[str]:
        return [e.item_id for e in self.entries]

    def rank_of(self, item_id: str) -> int:
        for e in self.entries:
            if e.item_id == item_id:
                return e.rank
        raise KeyError(item_id)

    def __len__(self) -> int:
        return len(self.entries)


def rank(query_id: str, scores: Dict[str, float]) -> RankedList:
    """Sort by score descending, ties by ascending item id; ranks 1..D."""
    if not scores:
        raise ValueError(f"no scores to rank for query {query_id!r}")
    for item_id, score in scores.items():
        if math.isnan(score):
            raise NumericalError(f"NaN score for item {item_id!r}")
    ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return RankedList(
        query_id,
        [RankEntry(i + 1, item, float(s)) for i, (item, s) in enumerate(ordered)],
    )


@dataclass
class BackgroundSet:
    """Similarity matrix of C fixed background queries against D videos."""

    query_ids: List[str]
    video_ids: List[str]
    matrix: np.ndarray  # (C, D), C may be 0

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64).reshape(
            len(self.query_ids), len(self.video_ids)
        )


def build_background(
    model: TxVModel,
    text_banks: Sequence[FeatureBank],
    caption_ids: Sequence[str],
    video_banks: Sequence[FeatureBank],
    video_ids: Sequence[str],
) -> BackgroundSet:
    """Compute the background similarity matrix once for reuse across queries."""
    if not video_ids:
        raise ValueError("background set needs a non-empty video universe")
    if not caption_ids:
        return BackgroundSet([], list(video_ids), np.empty((0, len(video_ids))))
    mat = similarity_matrix(
        model,
        bank_features(text_banks, caption_ids),
        bank_features(video_banks, video_ids),
    )
    return BackgroundSet(list(caption_ids), list(video_ids), mat)


def dsinf_rescore(y, bg: BackgroundSet, temperature: float = 1.0) -> np.ndarray:
    """Revise a query's score vector with the dual-softmax construction.

    The query row is stacked on top of the background matrix, a column-wise
    and a row-wise softmax are multiplied elementwise, and the revised
    query row is returned.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != len(bg.video_ids):
        raise DimensionError(
            f"score vector has length {y.shape[0] if y.ndim == 1 else y.shape}, "
            f"background set has {len(bg.video_ids)} videos"
        )
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = np.vstack([y[None, :], bg.matrix]) / temperature
    revised = softmax(z, Axis.COLUMNS) * softmax(z, Axis.ROWS)
    return revised[0]


def rescore_list(
    lst: RankedList, bg: BackgroundSet, temperature: float = 1.0
) -> RankedList:
    """Apply dsinf_rescore to a ranked list covering the background's universe."""
    if set(lst.item_ids()) != set(bg.video_ids):
        raise DimensionError(
            f"query {lst.query_id!r}: ranked items do not match the background "
            "video universe"
        )
    scores = {e.item_id: e.score for e in lst.entries}
    y = np.array([scores[v] for v in bg.video_ids])
    y_star = dsinf_rescore(y, bg, temperature)
    return rank(lst.query_id, dict(zip(bg.video_ids, y_star)))


def fuse_ranks(inputs: Sequence[RankedList]) -> RankedList:
    """Order items by the arithmetic mean of their 1-based ranks.

    The fused list carries the mean rank as score and is flagged ascending
    (lower is better). Ties resolve by ascending item id.
    """
    if not inputs:
        raise FusionError("need at least one ranked list to fuse")
    universe = set(inputs[0].item_ids())
    for i, lst in enumerate(inputs[1:], start=1):
        if set(lst.item_ids()) != universe:
            raise FusionError(
                f"list {i} (query {lst.query_id!r}) has a different item universe"
            )
    mean_rank: Dict[str, float] = {}
    for item in universe:
        ranks = [lst.rank_of(item) for lst in inputs]
        mean_rank[item] = sum(ranks) / len(ranks)
    ordered = sorted(mean_rank.items(), key=lambda kv: (kv[1], kv[0]))
    return RankedList(
        inputs[0].query_id,
        [RankEntry(i + 1, item, score) for i, (item, score) in enumerate(ordered)],
        ascending=True,
    )


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def save_rankings(lists: Sequence[RankedList], path) -> None:
    """query_id TAB rank TAB item_id TAB score, grouped by query."""
    with open(path, "w", encoding="utf-8") as fh:
        for lst in lists:
            for e in lst.entries:
                fh.write(f"{lst.query_id}\t{e.rank}\t{e.item_id}\t{e.score:.9g}\n")


def load_rankings(path) -> List[RankedList]:
    out: List[RankedList] = []
    current: Dict[str, RankedList] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}: line {line_no}: expected 4 TAB fields")
            qid, rank_str, item, score = parts
            if qid not in current:
                current[qid] = RankedList(qid)
                out.append(current[qid])
            current[qid].entries.append(
                RankEntry(int(rank_str), item, float(score))
            )
    for lst in out:
        lst.entries.sort(key=lambda e: e.rank)
        if lst.entries and lst.entries[0].score <= lst.entries[-1].score:
            lst.ascending = len(lst.entries) > 1
    return out


def save_background(bg: BackgroundSet, bank_path, sidecar_path) -> None:
    """Cache as a feature bank of X* rows plus a video-order sidecar TSV."""
    bank = FeatureBank(name="background", dim=len(bg.video_ids))
    for i, qid in enumerate(bg.query_ids):
        bank.add(qid, bg.matrix[i])
    save_bank(bank, bank_path)
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        for vid in bg.video_ids:
            fh.write(vid + "\n")


def load_background(bank_path, sidecar_path) -> BackgroundSet:
    bank = load_bank(bank_path, name="background")
    with open(sidecar_path, "r", encoding="utf-8") as fh:
        video_ids = [line.rstrip("\n") for line in fh if line.strip()]
    if bank.dim != len(video_ids):
        raise DimensionError(
            f"background matrix has {bank.dim} columns but sidecar lists "
            f"{len(video_ids)} videos"
        )
    ids = bank.ids()
    mat = bank.matrix(ids) if ids else np.empty((0, len(video_ids)))
    return BackgroundSet(ids, video_ids, mat)
