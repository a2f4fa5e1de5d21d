"""Label hierarchies and per-query relevance assignment.

A hierarchy file is newline-delimited ``instance_id<TAB>path`` records where
the path is ``/``-separated, coarsest component first, and every path has the
same number of components. Node ids are global: the same id may not appear
under two different parents.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DuplicateInstanceError,
    EmptyInputError,
    EmptyLevelDivisionError,
    MalformedRecordError,
    NonTreeParentageError,
    QueryInCandidatesError,
    RaggedDepthError,
    TooFewLeavesError,
    UnknownInstanceError,
)

LabelPath = tuple[str, ...]


@dataclass(frozen=True)
class Taxonomy:
    """Immutable label tree of uniform depth.

    ``entries`` maps each instance id to its label path; ``level_sizes[l-1]``
    is the number of distinct labels at level ``l`` (1-based, coarsest first).
    """

    depth: int
    entries: Mapping[str, LabelPath]
    level_sizes: tuple[int, ...]

    def path(self, instance_id: str) -> LabelPath:
        try:
            return self.entries[instance_id]
        except KeyError:
            raise UnknownInstanceError(instance_id) from None

    def leaf(self, instance_id: str) -> str:
        return self.path(instance_id)[-1]


@dataclass(frozen=True)
class RelevancePartition:
    """Per-query partition of a candidate set by common-ancestor level.

    ``levels[i]`` is the level of the closest ancestor shared by candidate i
    and the query (0 = no shared node, ``depth`` = same leaf). ``relevance``
    is None until a profile has been applied; once set, relevance is 0
    exactly for level-0 candidates.
    """

    query_id: str
    candidate_ids: tuple[str, ...]
    levels: np.ndarray
    depth: int
    relevance: np.ndarray | None = None
    level_counts: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.level_counts is None:
            counts = np.bincount(self.levels, minlength=self.depth + 1)
            object.__setattr__(self, "level_counts", counts)

    @property
    def num_positives(self) -> int:
        return int(self.level_counts[1:].sum())


@dataclass(frozen=True)
class MonotonicityWarning:
    """A deeper level whose relevance does not dominate a shallower one."""

    level_hi: int
    level_lo: int
    min_rel_hi: float
    max_rel_lo: float


@dataclass(frozen=True)
class RelevanceProfile:
    """How a candidate's common-ancestor level maps to a relevance value.

    Three kinds:

    * ``alpha`` -- level l gets total weight (l/L)**alpha shared uniformly by
      the candidates at that level.
    * ``weighted-ap`` -- per-level weights w_1..w_L (positive, summing to 1);
      a level-l candidate gets sum_{p<=l} w_p / |union of levels >= p|. Under
      this profile the graded AP equals the w-weighted sum of per-level APs.
    * ``explicit`` -- direct table from level to relevance; levels mapped to 0
      are treated as negatives.
    """

    kind: str
    alpha_value: float = 1.0
    weights: tuple[float, ...] = ()
    table: Mapping[int, float] = field(default_factory=dict)

    @classmethod
    def alpha(cls, alpha: float = 1.0) -> "RelevanceProfile":
        if not alpha > 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        return cls(kind="alpha", alpha_value=float(alpha))

    @classmethod
    def weighted_ap(cls, weights: Sequence[float]) -> "RelevanceProfile":
        w = tuple(float(x) for x in weights)
        if not w or any(x <= 0 for x in w):
            raise ValueError("weights must be non-empty and positive")
        if abs(sum(w) - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {sum(w)!r}")
        return cls(kind="weighted-ap", weights=w)

    @classmethod
    def explicit(cls, table: Mapping[int, float]) -> "RelevanceProfile":
        tab = {int(l): float(r) for l, r in table.items()}
        if any(r < 0 for r in tab.values()):
            raise ValueError("explicit relevance values must be non-negative")
        if tab.get(0, 0.0) != 0.0:
            raise ValueError("level 0 must have relevance 0")
        return cls(kind="explicit", table=tab)

    @classmethod
    def fine_only(cls, depth: int) -> "RelevanceProfile":
        """Binary profile: only same-leaf candidates count as positive."""
        return cls.explicit({l: 0.0 for l in range(depth)} | {depth: 1.0})


def ancestor_level(path_a: Sequence[str], path_b: Sequence[str]) -> int:
    """Length of the longest common prefix of two label paths."""
    level = 0
    for a, b in zip(path_a, path_b):
        if a != b:
            break
        level += 1
    return level


def parse_taxonomy(text: str) -> Taxonomy:
    """Parse a hierarchy document into a validated Taxonomy."""
    entries: dict[str, LabelPath] = {}
    depth = None
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r")
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 2 or not fields[0] or not fields[1]:
            raise MalformedRecordError(
                f"line {lineno}: expected 'instance_id<TAB>path', got {line!r}"
            )
        instance_id, path_text = fields
        parts = tuple(path_text.split("/"))
        if any(not p for p in parts):
            raise MalformedRecordError(
                f"line {lineno}: empty path component in {path_text!r}"
            )
        if depth is None:
            depth = len(parts)
        elif len(parts) != depth:
            raise RaggedDepthError(
                f"line {lineno}: path has {len(parts)} components, expected {depth}"
            )
        if instance_id in entries:
            raise DuplicateInstanceError(f"line {lineno}: duplicate id {instance_id!r}")
        entries[instance_id] = parts
    if not entries:
        raise EmptyInputError("no records in input")
    _check_tree(entries.values())
    leaves = {p[-1] for p in entries.values()}
    if len(leaves) < 2:
        raise TooFewLeavesError(f"need at least 2 distinct leaf labels, got {len(leaves)}")
    return Taxonomy(depth=depth, entries=entries, level_sizes=_level_sizes(entries.values(), depth))


def format_taxonomy(tax: Taxonomy) -> str:
    """Serialize back to the tab-separated file format (sorted by id)."""
    lines = [f"{iid}\t{'/'.join(path)}" for iid, path in sorted(tax.entries.items())]
    return "\n".join(lines) + "\n"


def _check_tree(paths: Iterable[LabelPath]) -> None:
    # node identity is (id); its observed (level, parent) must be unique
    seen: dict[str, tuple[int, str | None]] = {}
    for path in paths:
        parent = None
        for level, node in enumerate(path, start=1):
            key = (level, parent)
            if node in seen and seen[node] != key:
                raise NonTreeParentageError(
                    f"node {node!r} appears both as {seen[node]} and {key} (level, parent)"
                )
            seen[node] = key
            parent = node


def _level_sizes(paths: Iterable[LabelPath], depth: int) -> tuple[int, ...]:
    prefixes: list[set[LabelPath]] = [set() for _ in range(depth)]
    for path in paths:
        for l in range(depth):
            prefixes[l].add(path[: l + 1])
    return tuple(len(s) for s in prefixes)


def leaf_only(tax: Taxonomy) -> Taxonomy:
    """Depth-1 view keeping only the leaf label of every instance."""
    entries = {iid: (path[-1],) for iid, path in tax.entries.items()}
    return Taxonomy(depth=1, entries=entries, level_sizes=(tax.level_sizes[-1],))


def build_partition(
    tax: Taxonomy, query: str, candidates: Sequence[str]
) -> RelevancePartition:
    """Assign every candidate its common-ancestor level with the query."""
    query_path = tax.path(query)
    candidate_ids = tuple(candidates)
    if query in candidate_ids:
        raise QueryInCandidatesError(query)
    levels = np.array(
        [ancestor_level(query_path, tax.path(c)) for c in candidate_ids], dtype=np.int64
    )
    return RelevancePartition(
        query_id=query, candidate_ids=candidate_ids, levels=levels, depth=tax.depth
    )


def partition_from_paths(
    query_id: str,
    query_path: LabelPath,
    candidate_ids: Sequence[str],
    candidate_paths: Sequence[LabelPath],
    depth: int,
) -> RelevancePartition:
    """Build a partition directly from label paths (no Taxonomy lookup)."""
    levels = np.array(
        [ancestor_level(query_path, p) for p in candidate_paths], dtype=np.int64
    )
    return RelevancePartition(
        query_id=query_id, candidate_ids=tuple(candidate_ids), levels=levels, depth=depth
    )


def assign_relevance(
    part: RelevancePartition, profile: RelevanceProfile
) -> RelevancePartition:
    """Apply a relevance profile; returns a new partition with relevance set.

    For explicit profiles, levels whose table value is 0 (or missing) are
    reassigned to level 0 so that relevance == 0 always means negative.
    """
    levels = part.levels
    depth = part.depth
    counts = part.level_counts

    if profile.kind == "alpha":
        per_level = np.zeros(depth + 1)
        for l in range(1, depth + 1):
            if counts[l] > 0:
                per_level[l] = (l / depth) ** profile.alpha_value / counts[l]
        rel = per_level[levels]
        return replace(part, relevance=rel)

    if profile.kind == "weighted-ap":
        if len(profile.weights) != depth:
            raise ValueError(
                f"profile has {len(profile.weights)} weights for depth {depth}"
            )
        # |union of levels >= p| for p = 1..depth
        upper_counts = np.cumsum(counts[::-1])[::-1]
        per_level = np.zeros(depth + 1)
        acc = 0.0
        for p in range(1, depth + 1):
            if upper_counts[p] == 0:
                if profile.weights[p - 1] != 0.0:
                    raise EmptyLevelDivisionError(
                        f"no candidate at level >= {p} but weight {profile.weights[p - 1]}"
                    )
                continue
            acc += profile.weights[p - 1] / upper_counts[p]
            per_level[p] = acc
        rel = per_level[levels]
        return replace(part, relevance=rel)

    if profile.kind == "explicit":
        rel = np.array([profile.table.get(int(l), 0.0) for l in levels])
        new_levels = np.where(rel > 0, levels, 0)
        new_counts = np.bincount(new_levels, minlength=depth + 1)
        return replace(
            part, relevance=rel, levels=new_levels, level_counts=new_counts
        )

    raise ValueError(f"unknown profile kind {profile.kind!r}")


def validate_relevance(part: RelevancePartition) -> list[MonotonicityWarning]:
    """Report level pairs where relevance fails to decrease up the tree.

    Per-level normalization can make a deep, populous level less relevant per
    instance than a shallow, sparse one; this surfaces those cases without
    failing.
    """
    if part.relevance is None:
        raise ValueError("relevance has not been assigned")
    warnings = []
    present = [l for l in range(1, part.depth + 1) if part.level_counts[l] > 0]
    for i, hi in enumerate(present):
        for lo in present[:i]:
            min_hi = float(part.relevance[part.levels == hi].min())
            max_lo = float(part.relevance[part.levels == lo].max())
            if min_hi <= max_lo:
                warnings.append(
                    MonotonicityWarning(
                        level_hi=hi, level_lo=lo, min_rel_hi=min_hi, max_rel_lo=max_lo
                    )
                )
    return warnings
