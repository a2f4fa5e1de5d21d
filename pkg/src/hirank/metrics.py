"""Exact evaluation of graded ranking metrics.

All metrics operate on a ScoredRanking: one query's candidates with cosine
(or any) scores, a per-candidate relevance value and the common-ancestor
level it derives from. Rank comparisons use strict score inequality, so tied
scores produce no inversion in either direction; operations that need a
concrete list order (cutoff metrics, set intersections) sort by descending
score and break ties by ascending candidate id.
"""

from __future__ import annotations

from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    AllQueriesEmptyError,
    DuplicateInstanceError,
    IndexOutOfRangeError,
    MalformedRecordError,
    NegativeQueryError,
    NoPositivesError,
)
from .taxonomy import RelevancePartition


@dataclass(frozen=True)
class ScoredRanking:
    """One query's candidates with scores, relevance values and levels."""

    query_id: str
    candidate_ids: tuple[str, ...]
    scores: np.ndarray
    relevance: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        n = len(self.candidate_ids)
        if n < 1:
            raise ValueError("a ranking needs at least one candidate")
        for name in ("scores", "relevance", "levels"):
            arr = np.asarray(getattr(self, name))
            if arr.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")
            object.__setattr__(self, name, arr)
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")
        if np.any(self.relevance < 0):
            raise ValueError("relevance must be non-negative")
        if np.any((self.relevance == 0) != (self.levels == 0)):
            raise ValueError("relevance must be 0 exactly on level-0 candidates")

    @classmethod
    def from_partition(
        cls, part: RelevancePartition, scores: Sequence[float]
    ) -> "ScoredRanking":
        if part.relevance is None:
            raise ValueError("partition has no relevance assigned")
        return cls(
            query_id=part.query_id,
            candidate_ids=part.candidate_ids,
            scores=np.asarray(scores, dtype=np.float64),
            relevance=np.asarray(part.relevance, dtype=np.float64),
            levels=np.asarray(part.levels, dtype=np.int64),
        )

    def __len__(self) -> int:
        return len(self.candidate_ids)

    @property
    def positive_mask(self) -> np.ndarray:
        return self.levels > 0

    def sorted_order(self) -> list[int]:
        """Candidate indices by descending score, ties by ascending id."""
        return sorted(
            range(len(self)), key=lambda i: (-self.scores[i], self.candidate_ids[i])
        )


def _require_positives(r: ScoredRanking) -> None:
    if not np.any(r.positive_mask):
        raise NoPositivesError(f"query {r.query_id!r} has no positive candidate")


def rank_of(
    r: ScoredRanking, k: int, restrict: Callable[[int], bool] | None = None
) -> float:
    """1 + the number of (restricted) candidates scored strictly above k."""
    if not 0 <= k < len(r):
        raise IndexOutOfRangeError(k)
    above = r.scores > r.scores[k]
    if restrict is not None:
        above &= np.array([restrict(int(l)) for l in r.levels])
    return 1.0 + float(above.sum())


def h_rank(r: ScoredRanking, k: int) -> float:
    """Graded rank of positive candidate k.

    rel(k) plus, for every positive scored above k, the relevance the two
    candidates can agree on: min(rel(k), rel(j)).
    """
    if not 0 <= k < len(r):
        raise IndexOutOfRangeError(k)
    if r.levels[k] == 0:
        raise NegativeQueryError(f"candidate {r.candidate_ids[k]!r} is a negative")
    above = (r.scores > r.scores[k]) & r.positive_mask
    return float(r.relevance[k] + np.minimum(r.relevance[k], r.relevance[above]).sum())


def h_ap(r: ScoredRanking) -> float:
    """Graded average precision: sum of h_rank/rank over positives, normalized.

    The normalizer is the total positive relevance, so a ranking sorted by
    non-increasing relevance scores exactly 1. With binary relevance this is
    the classic average precision.
    """
    _require_positives(r)
    pos = r.positive_mask
    greater = r.scores[None, :] > r.scores[:, None]  # [k, j] = s_j > s_k
    ranks = 1.0 + greater.sum(axis=1)
    agree = np.minimum.outer(r.relevance[pos], r.relevance) * pos[None, :]
    hranks = r.relevance[pos] + (agree * greater[pos]).sum(axis=1)
    return float((hranks / ranks[pos]).sum() / r.relevance[pos].sum())


def ap_level(r: ScoredRanking, level: int) -> float:
    """Binary average precision treating levels >= `level` as positive."""
    if level < 1:
        raise ValueError(f"level must be >= 1, got {level}")
    posl = r.levels >= level
    if not np.any(posl):
        raise NoPositivesError(f"query {r.query_id!r} has no candidate at level >= {level}")
    greater = r.scores[None, :] > r.scores[:, None]
    ranks = 1.0 + greater.sum(axis=1)
    ranks_l = 1.0 + (greater & posl[None, :]).sum(axis=1)
    return float((ranks_l[posl] / ranks[posl]).mean())


def h_pr_at_k(r: ScoredRanking, k: int) -> tuple[float, float]:
    """Graded recall and precision at list position k (1-based).

    Recall@k is the relevance mass of the first k items over the total mass;
    precision@k compares each of the first k items against the k-th via
    min(rel(j), rel(k)), normalized by k*rel(k). At a negative k-th item the
    precision is reported as 0.
    """
    _require_positives(r)
    if not 1 <= k <= len(r):
        raise IndexOutOfRangeError(k)
    rel = r.relevance[r.sorted_order()]
    recall = float(rel[:k].sum() / rel.sum())
    if rel[k - 1] == 0:
        return recall, 0.0
    precision = float(np.minimum(rel[:k], rel[k - 1]).sum() / (k * rel[k - 1]))
    return recall, precision


def h_ap_pr_oracle(r: ScoredRanking) -> float:
    """Graded AP as the area under the graded precision-recall curve.

    Sums (recall@k - recall@(k-1)) * precision@k over list positions; only
    positive positions contribute a recall increment. Serves as an
    independent cross-check of h_ap.
    """
    _require_positives(r)
    rel = r.relevance[r.sorted_order()]
    total = rel.sum()
    area = 0.0
    for k in range(1, len(rel) + 1):
        if rel[k - 1] == 0:
            continue
        increment = rel[k - 1] / total
        precision = np.minimum(rel[:k], rel[k - 1]).sum() / (k * rel[k - 1])
        area += increment * precision
    return float(area)


def asi(r: ScoredRanking) -> float:
    """Average set intersection between predicted and ideal rankings.

    At each n up to the number of positives, compares the multiset of
    relevance levels of the top-n predicted items against the ideal top-n
    (candidates sorted by non-increasing level), so the value does not depend
    on arbitrary ordering inside ties.
    """
    _require_positives(r)
    n_pos = int(r.positive_mask.sum())
    pred = [int(r.levels[i]) for i in r.sorted_order()]
    ideal = sorted(pred, reverse=True)
    total = 0.0
    for n in range(1, n_pos + 1):
        common = Counter(pred[:n]) & Counter(ideal[:n])
        total += sum(common.values()) / n
    return total / n_pos


def ndcg(r: ScoredRanking) -> float:
    """Discounted cumulative gain with gains 2**level - 1, ideal-normalized."""
    _require_positives(r)
    pos = r.positive_mask
    greater = r.scores[None, :] > r.scores[:, None]
    ranks = 1.0 + greater.sum(axis=1)
    gains = 2.0 ** r.levels[pos] - 1.0
    dcg = float((gains / np.log2(1.0 + ranks[pos])).sum())
    ideal_gains = 2.0 ** np.sort(r.levels)[::-1] - 1.0
    ideal_ranks = np.arange(1, len(r) + 1)
    ideal = float((ideal_gains / np.log2(1.0 + ideal_ranks)).sum())
    return dcg / ideal


def recall_at_k(r: ScoredRanking, k: int, level: int) -> int:
    """1 if any of the top-k scored candidates sits at `level` or deeper."""
    if not np.any(r.levels >= level):
        raise NoPositivesError(f"query {r.query_id!r} has no candidate at level >= {level}")
    if k < 1:
        raise IndexOutOfRangeError(k)
    top = r.sorted_order()[: min(k, len(r))]
    return int(any(r.levels[i] >= level for i in top))


@dataclass
class MetricsReport:
    """Mean metrics over the queries of a dataset, plus per-query values."""

    queries: int
    excluded: int
    h_ap: float
    ap_level: dict[int, float]
    asi: float
    ndcg: float
    recall_at_k: dict[int, float]
    per_query: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        out: dict = {"queries": self.queries, "excluded": self.excluded, "h_ap": self.h_ap}
        for l in sorted(self.ap_level):
            out[f"ap_level_{l}"] = self.ap_level[l]
        out["asi"] = self.asi
        out["ndcg"] = self.ndcg
        out["recall_at_k"] = {str(k): v for k, v in sorted(self.recall_at_k.items())}
        return out


def _query_metrics(r: ScoredRanking, depth: int, ks: Sequence[int]) -> dict[str, float]:
    row: dict[str, float] = {
        "h_ap": h_ap(r),
        "asi": asi(r),
        "ndcg": ndcg(r),
    }
    for l in range(1, depth + 1):
        if np.any(r.levels >= l):
            row[f"ap_level_{l}"] = ap_level(r, l)
    if np.any(r.levels >= depth):
        for k in ks:
            row[f"recall_at_{k}"] = float(recall_at_k(r, k, depth))
    return row


def evaluate_dataset(
    rankings: Sequence[ScoredRanking],
    ks: Sequence[int] = (1,),
    depth: int | None = None,
    threads: int = 1,
) -> MetricsReport:
    """Per-query metrics and their arithmetic means.

    Queries without a single positive are excluded from every mean and
    counted. Each metric averages over the queries where it is defined
    (e.g. a level's AP skips queries with no candidate at that level).
    The result is independent of `threads`.
    """
    included = [r for r in rankings if np.any(r.positive_mask)]
    excluded = len(rankings) - len(included)
    if not included:
        raise AllQueriesEmptyError("no query has a positive candidate")
    if depth is None:
        depth = max(int(r.levels.max()) for r in included)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda r: _query_metrics(r, depth, ks), included))
    else:
        rows = [_query_metrics(r, depth, ks) for r in included]

    per_query = {r.query_id: row for r, row in zip(included, rows)}

    def mean_of(key: str) -> float:
        vals = [row[key] for row in rows if key in row]
        return float(np.mean(vals)) if vals else float("nan")

    return MetricsReport(
        queries=len(included),
        excluded=excluded,
        h_ap=mean_of("h_ap"),
        ap_level={l: mean_of(f"ap_level_{l}") for l in range(1, depth + 1)},
        asi=mean_of("asi"),
        ndcg=mean_of("ndcg"),
        recall_at_k={k: mean_of(f"recall_at_{k}") for k in ks},
        per_query=per_query,
    )


def parse_scores(text: str) -> dict[str, tuple[list[str], list[float]]]:
    """Parse `query_id<TAB>candidate_id<TAB>score` lines, preserving order."""
    out: dict[str, tuple[list[str], list[float]]] = {}
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r")
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 3 or not fields[0] or not fields[1]:
            raise MalformedRecordError(
                f"line {lineno}: expected 'query<TAB>candidate<TAB>score', got {line!r}"
            )
        query_id, candidate_id, score_text = fields
        try:
            score = float(score_text)
        except ValueError:
            raise MalformedRecordError(
                f"line {lineno}: bad score {score_text!r}"
            ) from None
        ids, scores = out.setdefault(query_id, ([], []))
        if candidate_id in ids:
            raise DuplicateInstanceError(
                f"line {lineno}: candidate {candidate_id!r} repeated for query {query_id!r}"
            )
        ids.append(candidate_id)
        scores.append(score)
    return out
