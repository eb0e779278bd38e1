"""Selectivity estimation and routing between graph search and brute force."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .core import UsageError, VectorDataset
from .filters import FilterCondition, compile_filter, mask, validate
from .graph import HnswIndex
from .search import (ROUTE_BRUTE, ROUTE_GRAPH, BatchResult, QueryOutcome, SearchParams,
                     _as_queries, favor_search)


@dataclass(frozen=True)
class SelectorConfig:
    lambda_threshold: float = 0.01
    sample_fraction: float = 0.01
    min_sample: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.lambda_threshold < 1.0:
            raise UsageError("lambda_threshold must lie in (0, 1)")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise UsageError("sample_fraction must lie in (0, 1]")
        if self.min_sample < 1:
            raise UsageError("min_sample must be positive")

    def sample_size(self, population: int) -> int:
        n = max(self.min_sample, math.ceil(self.sample_fraction * population))
        return min(n, population)


def draw_sample(population: int, cfg: SelectorConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Record indices drawn uniformly without replacement."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    return rng.choice(population, size=cfg.sample_size(population), replace=False)


def estimate_selectivity(f: FilterCondition, ds: VectorDataset, cfg: SelectorConfig,
                         rng: np.random.Generator | None = None,
                         sample: np.ndarray | None = None) -> float:
    """TD fraction in a without-replacement sample of the dataset.

    Deterministic for a given ``cfg.seed`` unless an explicit ``rng`` or
    pre-drawn ``sample`` is supplied.
    """
    if ds.count < 1:
        raise UsageError("cannot estimate selectivity on an empty dataset")
    idx = sample if sample is not None else draw_sample(ds.count, cfg, rng)
    return float(np.count_nonzero(mask(f, ds.attributes.take(idx)))) / len(idx)


def theoretical_relative_error(p: float, n: int, N: int) -> float:
    """Relative standard error of the sampled selectivity (hypergeometric model)."""
    if not 0.0 < p <= 1.0:
        raise UsageError(f"p must lie in (0, 1], got {p}")
    if not 1 <= n <= N:
        raise UsageError(f"need 1 <= n <= N, got n={n} N={N}")
    return math.sqrt((1.0 - p) / (n * p) * (1.0 - n / N))


def route(p_hat: float, cfg: SelectorConfig) -> str:
    if not 0.0 <= p_hat <= 1.0:
        raise UsageError(f"p_hat must lie in [0, 1], got {p_hat}")
    return ROUTE_BRUTE if p_hat < cfg.lambda_threshold else ROUTE_GRAPH


def brute_force_batch(ds: VectorDataset, queries, f: FilterCondition, k: int) -> BatchResult:
    if k < 1:
        raise UsageError("k must be positive")
    validate(f, ds.attributes.arity)
    Q = _as_queries(queries, ds.dim)
    nq = len(Q)
    a = ds.attributes
    ids = np.empty((nq, k), np.int64)
    dists = np.empty((nq, k), np.float64)
    stats = np.zeros((nq, K.N_STATS), np.int64)
    t0 = time.perf_counter()
    K.brute_force(Q, ds.vectors, k, *compile_filter(f), a.bools, a.ints, a.floats, ids, dists, stats)
    elapsed = time.perf_counter() - t0
    return BatchResult(ids, dists, stats, np.count_nonzero(ids >= 0, axis=1), elapsed)


def brute_force_search(ds: VectorDataset, q, f: FilterCondition, k: int) -> QueryOutcome:
    """Exact filtered top-k by scanning every record."""
    return brute_force_batch(ds, q, f, k).outcome(0, ROUTE_BRUTE)


def answer(index: HnswIndex, ds: VectorDataset, q, f: FilterCondition, sp: SearchParams,
           cfg: SelectorConfig, query_id: int = 0) -> QueryOutcome:
    """Estimate selectivity, route, and dispatch one query.

    The sampling RNG is seeded from ``(cfg.seed, query_id)``.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng([cfg.seed, query_id])
    p_hat = estimate_selectivity(f, ds, cfg, rng=rng)
    if route(p_hat, cfg) == ROUTE_BRUTE:
        out = brute_force_search(ds, q, f, sp.k)
    else:
        out = favor_search(index, q, f, p_hat, sp)
    out.p_hat = p_hat
    out.elapsed = time.perf_counter() - t0
    return out

