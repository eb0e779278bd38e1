"""Synthetic attributes and the default desk-scale workload."""

from __future__ import annotations

import numpy as np

from ..core import AttributeTable, VectorDataset
from ..filters import BoolEq, FloatRange, IntEq, IntIn, And

DESK_COUNT = 100_000
DESK_DIM = 32
DESK_SEED = 42
DESK_QUERY_SEED = 4242


def synthesize_attributes(count: int, n_bool: int, n_int: int, n_float: int, seed: int) -> AttributeTable:
    """Bernoulli(0.5) bools, uniform {0..9} ints, uniform [0, 100] floats."""
    rng = np.random.default_rng(seed)
    return AttributeTable(
        rng.integers(0, 2, (count, n_bool), dtype=np.uint8),
        rng.integers(0, 10, (count, n_int), dtype=np.int32),
        rng.uniform(0.0, 100.0, (count, n_float)).astype(np.float32),
    )


def uniform_vectors(count: int, dim: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).random((count, dim), dtype=np.float32)


def desk_dataset(count: int = DESK_COUNT, dim: int = DESK_DIM, seed: int = DESK_SEED) -> VectorDataset:
    """Uniform vectors in [0, 1]^dim with 1 bool, 2 int and 1 float attribute."""
    vectors = uniform_vectors(count, dim, seed)
    return VectorDataset(vectors, synthesize_attributes(count, 1, 2, 1, seed + 1))


def desk_queries(count: int = 1000, dim: int = DESK_DIM, seed: int = DESK_QUERY_SEED) -> np.ndarray:
    return uniform_vectors(count, dim, seed)


# Filtering scenarios on the synthetic schema with their nominal selectivities.
SCENARIOS = {
    "equality_bool": (BoolEq(0, True), 0.5),
    "equality_int": (IntEq(0, 3), 0.1),
    "inclusion": (IntIn(0, frozenset({0, 1, 2})), 0.3),
    "range_10": (FloatRange(0, 0.0, 10.0), 0.1),
    "range_50": (FloatRange(0, 0.0, 50.0), 0.5),
    "logic": (And(IntEq(0, 3), FloatRange(0, 0.0, 50.0)), 0.05),
}
