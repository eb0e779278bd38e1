"""Shared value types and the Euclidean distance kernel."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class UsageError(ValueError):
    """Raised when an operation is called with arguments violating its contract."""


class DataError(ValueError):
    """Raised for malformed or inconsistent input data (files, schemas)."""


class Neighbor(NamedTuple):
    id: int
    dist: float


@dataclass(frozen=True)
class AttributeRecord:
    bools: tuple[bool, ...] = ()
    ints: tuple[int, ...] = ()
    floats: tuple[float, ...] = ()


def _as_columns(a, dtype) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=dtype)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise DataError("attribute columns must be 1-D or 2-D")
    return a


@dataclass
class AttributeTable:
    """Columnar attribute storage: one row per record, one column per attribute."""

    bools: np.ndarray  # (count, n_bool) uint8
    ints: np.ndarray  # (count, n_int) int32
    floats: np.ndarray  # (count, n_float) float32

    def __post_init__(self) -> None:
        self.bools = _as_columns(self.bools, np.uint8)
        self.ints = _as_columns(self.ints, np.int32)
        self.floats = _as_columns(self.floats, np.float32)
        n = len(self.bools)
        if len(self.ints) != n or len(self.floats) != n:
            raise DataError("attribute columns disagree on record count")
        if not np.all(np.isfinite(self.floats)):
            raise DataError("float attributes must be finite")

    @classmethod
    def empty(cls, count: int, n_bool: int = 0, n_int: int = 0, n_float: int = 0) -> "AttributeTable":
        return cls(
            np.zeros((count, n_bool), np.uint8),
            np.zeros((count, n_int), np.int32),
            np.zeros((count, n_float), np.float32),
        )

    @classmethod
    def from_records(cls, records: Sequence[AttributeRecord]) -> "AttributeTable":
        if not records:
            return cls.empty(0)
        nb, ni, nf = len(records[0].bools), len(records[0].ints), len(records[0].floats)
        for r in records:
            if (len(r.bools), len(r.ints), len(r.floats)) != (nb, ni, nf):
                raise DataError("records disagree on attribute arity")
        return cls(
            np.array([r.bools for r in records], np.uint8).reshape(len(records), nb),
            np.array([r.ints for r in records], np.int32).reshape(len(records), ni),
            np.array([r.floats for r in records], np.float32).reshape(len(records), nf),
        )

    def __len__(self) -> int:
        return len(self.bools)

    @property
    def arity(self) -> tuple[int, int, int]:
        return self.bools.shape[1], self.ints.shape[1], self.floats.shape[1]

    def record(self, i: int) -> AttributeRecord:
        return AttributeRecord(
            tuple(bool(b) for b in self.bools[i]),
            tuple(int(v) for v in self.ints[i]),
            tuple(float(v) for v in self.floats[i]),
        )

    def take(self, idx: np.ndarray) -> "AttributeTable":
        return AttributeTable(self.bools[idx], self.ints[idx], self.floats[idx])


@dataclass
class VectorDataset:
    vectors: np.ndarray  # (count, dim) float32
    attributes: AttributeTable = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        v = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if v.ndim != 2 or v.shape[1] < 1:
            raise DataError(f"vectors must be a 2-d array with dim >= 1, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError("vectors contain non-finite entries")
        self.vectors = v
        if self.attributes is None:
            self.attributes = AttributeTable.empty(len(v))
        if len(self.attributes) != len(v):
            raise DataError(
                f"{len(v)} vectors but {len(self.attributes)} attribute records"
            )

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    def __len__(self) -> int:
        return self.count


def euclidean(a, b) -> float:
    """Euclidean distance between two vectors of equal dimension."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise UsageError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return math.sqrt(float(np.dot(diff, diff)))


def top_k_of(candidates: Iterable[Neighbor], k: int) -> list[Neighbor]:
    """The ``k`` smallest neighbors by (dist, id), ascending."""
    if k < 1:
        raise UsageError("k must be >= 1")
    return sorted((Neighbor(int(i), float(d)) for i, d in candidates), key=lambda n: (n.dist, n.id))[:k]
