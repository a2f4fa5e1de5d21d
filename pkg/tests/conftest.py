"""Shared generators and independent oracles for the test suite.

The oracles here are deliberately written as plain loops over the metric
definitions, sharing no code with the library, so that agreement between
the two is evidence rather than tautology.
"""

from __future__ import annotations

import numpy as np
import pytest

from hirank.metrics import ScoredRanking

# one pass/fail line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


# --- random instance generators ---------------------------------------------------


def distinct_scores(rng: np.random.Generator, n: int) -> np.ndarray:
    """Scores with no ties, in random order."""
    while True:
        scores = rng.uniform(-1.0, 1.0, size=n)
        if len(np.unique(scores)) == n:
            return scores


def random_levels(
    rng: np.random.Generator, n: int, depth: int, require_deepest: bool = False
) -> np.ndarray:
    """Random levels in [0, depth] with at least one positive."""
    while True:
        levels = rng.integers(0, depth + 1, size=n)
        if require_deepest:
            if np.any(levels == depth):
                return levels
        elif np.any(levels > 0):
            return levels


def alpha_relevance(levels: np.ndarray, depth: int, alpha: float = 1.0) -> np.ndarray:
    """Reference alpha-profile relevance, computed independently."""
    rel = np.zeros(len(levels), dtype=np.float64)
    for l in range(1, depth + 1):
        members = levels == l
        count = int(members.sum())
        if count:
            rel[members] = (l / depth) ** alpha / count
    return rel


def weighted_relevance(levels: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Reference weighted-profile relevance, computed independently."""
    depth = len(weights)
    rel = np.zeros(len(levels), dtype=np.float64)
    for i, l in enumerate(levels):
        acc = 0.0
        for p in range(1, l + 1):
            acc += weights[p - 1] / int((levels >= p).sum())
        rel[i] = acc
    return rel


def make_ranking(
    rng: np.random.Generator,
    n: int,
    depth: int,
    alpha: float | None = 1.0,
    weights: np.ndarray | None = None,
    require_deepest: bool = False,
) -> ScoredRanking:
    levels = random_levels(rng, n, depth, require_deepest=require_deepest)
    if weights is not None:
        rel = weighted_relevance(levels, weights)
    else:
        rel = alpha_relevance(levels, depth, alpha if alpha is not None else 1.0)
    return ScoredRanking(
        query_id="q",
        candidate_ids=tuple(f"c{i}" for i in range(n)),
        scores=distinct_scores(rng, n),
        relevance=rel,
        levels=levels,
    )


# --- independent metric oracles -----------------------------------------------------


def oracle_binary_ap(scores: np.ndarray, positive: np.ndarray) -> float:
    """Textbook binary AP: mean precision at each positive's position."""
    order = np.argsort(-scores, kind="stable")
    hits = 0
    total = 0.0
    for position, idx in enumerate(order, start=1):
        if positive[idx]:
            hits += 1
            total += hits / position
    return total / positive.sum()


def oracle_h_ap(scores: np.ndarray, rel: np.ndarray) -> float:
    """Direct loop over the graded-AP definition, one pair at a time."""
    n = len(scores)
    total_rel = rel.sum()
    acc = 0.0
    for k in range(n):
        if rel[k] <= 0:
            continue
        hrank = rel[k]
        rank = 1.0
        for j in range(n):
            if j == k or scores[j] <= scores[k]:
                continue
            rank += 1.0
            if rel[j] > 0:
                hrank += min(rel[k], rel[j])
        acc += hrank / rank
    return acc / total_rel


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


# --- shared hand-built fixture -------------------------------------------------------

FIXTURE_LEVELS = np.array([2, 3, 0, 1])  # in descending score order
FIXTURE_SCORES = np.array([4.0, 3.0, 2.0, 1.0])
FIXTURE_REL = np.array([2 / 3, 1.0, 0.0, 1 / 3])


@pytest.fixture
def fixture_875() -> ScoredRanking:
    """Depth-3, one candidate per level: h_ap lands on 21/24 = 0.875."""
    return ScoredRanking(
        query_id="q",
        candidate_ids=("c2", "c3", "c0", "c1"),
        scores=FIXTURE_SCORES,
        relevance=FIXTURE_REL,
        levels=FIXTURE_LEVELS,
    )
