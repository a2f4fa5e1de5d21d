"""Dataset container and on-disk formats.

A dataset directory holds three text files:

    taxonomy.tsv   instance_id<TAB>root/child/leaf (one label path per line)
    features.tsv   instance_id<TAB>comma-separated floats
    split.txt      holdout leaf labels, one per line

The holdout is open-set by construction: the split names whole fine (leaf)
classes, so no held-out class can also occur in training.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DuplicateInstanceError,
    EmptyInputError,
    MalformedRecordError,
    UnknownInstanceError,
)
from .taxonomy import Taxonomy, parse_taxonomy, format_taxonomy

TAXONOMY_FILE = "taxonomy.tsv"
FEATURES_FILE = "features.tsv"
SPLIT_FILE = "split.txt"


@dataclass
class RetrievalDataset:
    """A label hierarchy with one feature vector per instance and a holdout."""

    taxonomy: Taxonomy
    ids: tuple[str, ...]
    features: np.ndarray
    holdout_classes: frozenset[str] = frozenset()
    row_of: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.ids = tuple(self.ids)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.shape[0] != len(self.ids):
            raise ValueError("one feature row per instance id required")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")
        self.row_of = {i: r for r, i in enumerate(self.ids)}
        known = set(self.taxonomy.entries)
        missing = known - set(self.ids)
        extra = set(self.ids) - known
        if extra:
            raise UnknownInstanceError(sorted(extra)[0])
        if missing:
            raise MalformedRecordError(
                f"{len(missing)} instance(s) have no feature row, e.g. {sorted(missing)[0]!r}"
            )
        leaves = {self.taxonomy.leaf(i) for i in self.ids}
        unknown_split = self.holdout_classes - leaves
        if unknown_split:
            raise MalformedRecordError(
                f"split names unknown leaf label {sorted(unknown_split)[0]!r}"
            )

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def holdout_ids(self) -> frozenset[str]:
        return frozenset(
            i for i in self.ids if self.taxonomy.leaf(i) in self.holdout_classes
        )

    @property
    def train_ids(self) -> tuple[str, ...]:
        return tuple(
            i for i in self.ids if self.taxonomy.leaf(i) not in self.holdout_classes
        )

    @property
    def holdout_ids_ordered(self) -> tuple[str, ...]:
        return tuple(
            i for i in self.ids if self.taxonomy.leaf(i) in self.holdout_classes
        )

    def feature(self, instance_id: str) -> np.ndarray:
        try:
            return self.features[self.row_of[instance_id]]
        except KeyError:
            raise UnknownInstanceError(instance_id) from None


def parse_features(text: str) -> tuple[tuple[str, ...], np.ndarray]:
    """Parse `id<TAB>comma-separated floats` lines into (ids, matrix)."""
    ids: list[str] = []
    rows: list[list[float]] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r")
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 2 or not fields[0] or not fields[1]:
            raise MalformedRecordError(
                f"line {lineno}: expected 'id<TAB>floats', got {line!r}"
            )
        instance_id, payload = fields
        if instance_id in seen:
            raise DuplicateInstanceError(f"line {lineno}: {instance_id!r} repeated")
        seen.add(instance_id)
        try:
            row = [float(x) for x in payload.split(",")]
        except ValueError:
            raise MalformedRecordError(
                f"line {lineno}: bad float in feature row for {instance_id!r}"
            ) from None
        if rows and len(row) != len(rows[0]):
            raise MalformedRecordError(
                f"line {lineno}: feature row has {len(row)} values, expected {len(rows[0])}"
            )
        ids.append(instance_id)
        rows.append(row)
    if not ids:
        raise EmptyInputError("no feature rows found")
    return tuple(ids), np.asarray(rows, dtype=np.float64)


def format_features(ids: Sequence[str], matrix: np.ndarray) -> str:
    """Serialize feature rows with round-tripping float precision."""
    matrix = np.asarray(matrix, dtype=np.float64)
    lines = [
        f"{instance_id}\t{','.join(repr(float(x)) for x in row)}"
        for instance_id, row in zip(ids, matrix)
    ]
    return "\n".join(lines) + "\n"


def parse_split(text: str) -> tuple[str, ...]:
    """Parse one holdout leaf label per line."""
    out: list[str] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line:
            continue
        if "\t" in line or "/" in line:
            raise MalformedRecordError(f"line {lineno}: expected a bare leaf label")
        if line in seen:
            raise DuplicateInstanceError(f"line {lineno}: {line!r} repeated")
        seen.add(line)
        out.append(line)
    return tuple(out)


def format_split(labels: Sequence[str]) -> str:
    ordered = sorted(labels)
    return "\n".join(ordered) + ("\n" if ordered else "")


def write_text_atomic(path: Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_dataset(directory: Path) -> RetrievalDataset:
    """Load taxonomy, features and (optional) split from a dataset directory."""
    directory = Path(directory)
    taxonomy = parse_taxonomy((directory / TAXONOMY_FILE).read_text())
    ids, features = parse_features((directory / FEATURES_FILE).read_text())
    split_path = directory / SPLIT_FILE
    holdout = parse_split(split_path.read_text()) if split_path.exists() else ()
    return RetrievalDataset(taxonomy, ids, features, frozenset(holdout))


def write_dataset(ds: RetrievalDataset, directory: Path) -> None:
    """Write a dataset directory (atomic per file)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_text_atomic(directory / TAXONOMY_FILE, format_taxonomy(ds.taxonomy))
    write_text_atomic(directory / FEATURES_FILE, format_features(ds.ids, ds.features))
    write_text_atomic(directory / SPLIT_FILE, format_split(sorted(ds.holdout_classes)))
