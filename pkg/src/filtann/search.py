"""Graph search: plain beam search, exclusion-distance search, and the
result-set-filtering baseline."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .core import Neighbor, UsageError
from .filters import TRUE, FilterCondition, compile_filter, validate
from .graph import HnswIndex

ROUTE_GRAPH = "graph"
ROUTE_BRUTE = "brute_force"


@dataclass(frozen=True)
class SearchParams:
    ef: int = 100
    k: int = 10
    gamma_slack: float = 1.0
    td_fraction: float = 0.5
    termination_opt: bool = True
    normalize_by_ef: bool = True

    def __post_init__(self):
        if self.k < 1 or self.ef < 1:
            raise UsageError("k and ef must be positive")
        if self.k > self.ef:
            raise UsageError(f"k={self.k} exceeds ef={self.ef}")
        if self.gamma_slack <= 0:
            raise UsageError("gamma_slack must be positive")
        if not 0.0 <= self.td_fraction < 1.0:
            raise UsageError("td_fraction must lie in [0, 1)")


@dataclass
class SearchStats:
    dist_comps: int = 0
    hops: int = 0
    td_hops: int = 0

    @property
    def td_path_fraction(self) -> float:
        return self.td_hops / self.hops if self.hops else 0.0

    @classmethod
    def from_row(cls, row) -> "SearchStats":
        return cls(int(row[K.ST_DIST]), int(row[K.ST_HOPS]), int(row[K.ST_TD_HOPS]))


@dataclass
class QueryOutcome:
    hits: list[Neighbor]
    stats: SearchStats
    route: str = ROUTE_GRAPH
    p_hat: float | None = None
    exclusion: float = 0.0
    shortfall: int = 0
    elapsed: float = 0.0

    @property
    def ids(self) -> list[int]:
        return [h.id for h in self.hits]


@dataclass
class BatchResult:
    """Per-query outputs of a batch run; ``ids`` rows are padded with -1."""

    ids: np.ndarray
    dists: np.ndarray
    stats: np.ndarray
    td_in_results: np.ndarray
    elapsed: float
    exclusion: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return len(self.ids)

    def outcome(self, qi: int, route: str = ROUTE_GRAPH, p_hat: float | None = None) -> QueryOutcome:
        row = self.ids[qi]
        m = int(np.count_nonzero(row >= 0))
        hits = [Neighbor(int(row[t]), float(self.dists[qi, t])) for t in range(m)]
        excl = float(self.exclusion[qi]) if self.exclusion is not None else 0.0
        return QueryOutcome(hits, SearchStats.from_row(self.stats[qi]), route, p_hat, excl,
                            shortfall=self.ids.shape[1] - m, elapsed=self.elapsed / max(len(self), 1))


def exclusion_distance(p_hat: float, sp: SearchParams, delta_d: float) -> float:
    """Penalty added to NTD distances: ``(1-p)(ef-p)Δd / (2p)``, optionally divided by ef."""
    if not 0.0 < p_hat <= 1.0:
        raise UsageError(f"selectivity must lie in (0, 1], got {p_hat}; route to brute force")
    if not delta_d > 0:
        raise UsageError(f"delta_d must be positive, got {delta_d}")
    d = (1.0 - p_hat) * (sp.ef - p_hat) * delta_d / (2.0 * p_hat)
    return d / sp.ef if sp.normalize_by_ef else d


def adjusted_distance(raw: float, is_td: bool, D: float) -> float:
    return raw if is_td else raw + D


# -- plumbing ----------------------------------------------------------------


def _as_queries(q, dim) -> np.ndarray:
    arr = np.ascontiguousarray(q, dtype=np.float32)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise UsageError(f"query dimension {arr.shape[-1]} does not match index dimension {dim}")
    return arr


def _graph_args(index: HnswIndex):
    return (index.vectors, index.links0, index.deg0, index.up_links, index.up_deg, index.up_off)


def _filter_args(index: HnswIndex, f: FilterCondition):
    validate(f, index.attributes.arity)
    prog = compile_filter(f)
    a = index.attributes
    return (*prog, a.bools, a.ints, a.floats)


class _Buffers:
    def __init__(self, n: int, ef: int):
        self.visited = np.zeros(n, np.int32)
        self.c = (np.empty(n + 1, np.float64), np.empty(n + 1, np.int64), np.empty(n + 1, np.int64))
        self.r = (np.empty(ef + 2, np.float64), np.empty(ef + 2, np.int64), np.empty(ef + 2, np.int64))
        self.stats = np.zeros(K.N_STATS, np.int64)


def _drain_sorted(rk, ri, rf, rs):
    order = sorted(range(rs), key=lambda t: (rk[t], ri[t]))
    return [(int(ri[t]), float(rk[t]), int(rf[t])) for t in order]


# -- single-query API ----------------------------------------------------------


def greedy_search(index: HnswIndex, q, ef: int, ep: int, layer: int = 0) -> list[Neighbor]:
    """Beam search of width ``ef`` on one layer from ``ep``; R sorted ascending."""
    index.require_data()
    if not 0 <= ep < index.count or index.node_levels[ep] < layer or layer < 0:
        raise UsageError(f"entry point {ep} is not present on layer {layer}")
    if ef < 1:
        raise UsageError("ef must be positive")
    q = _as_queries(q, index.dim)[0]
    b = _Buffers(index.count, ef)
    rs = K.greedy_search(q, *_graph_args(index), ep, ef, layer, b.visited, 1, *b.c, *b.r, b.stats)
    return [Neighbor(i, d) for i, d, _ in _drain_sorted(*b.r, rs)]


def descend(index: HnswIndex, q) -> int:
    """Unfiltered ef=1 descent to layer 1; returns the base-layer entry point."""
    index.require_data()
    q = _as_queries(q, index.dim)[0]
    b = _Buffers(index.count, 1)
    ep, _ = K.descend(q, *_graph_args(index), index.entry_point, index.top_layer,
                      b.visited, 0, *b.c, *b.r, b.stats)
    return int(ep)


def opti_greedy_search(index: HnswIndex, q, f: FilterCondition, sp: SearchParams, ep: int,
                       D: float) -> tuple[list[Neighbor], int]:
    """Base-layer search under adjusted distances.

    Returns R (ascending by adjusted distance, as ``Neighbor(id, adjusted)``)
    and the TD count of R.
    """
    index.require_data()
    if not 0 <= ep < index.count:
        raise UsageError(f"entry point {ep} out of range")
    if D < 0:
        raise UsageError("exclusion distance must be non-negative")
    q = _as_queries(q, index.dim)[0]
    b = _Buffers(index.count, sp.ef)
    fa = _filter_args(index, f)
    fstack = np.empty(len(fa[0]), np.bool_)
    rs, n_td = K.opti_greedy_search(
        q, index.vectors, index.links0, index.deg0, ep, sp.ef, float(D), sp.gamma_slack,
        sp.td_fraction, sp.termination_opt, *fa, fstack, b.visited, 1, *b.c, *b.r, b.stats,
    )
    return [Neighbor(i, d) for i, d, _ in _drain_sorted(*b.r, rs)], int(n_td)


def favor_search(index: HnswIndex, q, f: FilterCondition, p_hat: float,
                 sp: SearchParams) -> QueryOutcome:
    D = 0.0 if p_hat == 1.0 else exclusion_distance(p_hat, sp, index.delta_d)
    res = batch_search(index, q, f, sp, "favor", exclusion=D)
    out = res.outcome(0, ROUTE_GRAPH, p_hat)
    return out


def rsf_search(index: HnswIndex, q, f: FilterCondition, sp: SearchParams) -> QueryOutcome:
    return batch_search(index, q, f, sp, "rsf").outcome(0)


def hnsw_search(index: HnswIndex, q, sp: SearchParams, f: FilterCondition = TRUE) -> QueryOutcome:
    """Plain search ignoring ``f`` during traversal; R is post-filtered by ``f``."""
    return batch_search(index, q, f, sp, "hnsw").outcome(0)


_METHODS = {"hnsw": K.M_PLAIN, "favor": K.M_FAVOR, "rsf": K.M_RSF}


def batch_search(index: HnswIndex, queries, f: FilterCondition, sp: SearchParams,
                 method: str, exclusion=None) -> BatchResult:
    """Run ``method`` ('favor', 'rsf' or 'hnsw') over a batch of queries.

    ``exclusion`` is the exclusion distance for favor: a scalar or one value
    per query.  The timed region covers the whole kernel call.
    """
    index.require_data()
    if method not in _METHODS:
        raise UsageError(f"unknown method {method!r}")
    Q = _as_queries(queries, index.dim)
    nq = len(Q)
    excl = np.zeros(nq, np.float64)
    if method == "favor":
        if exclusion is None:
            raise UsageError("favor search needs an exclusion distance")
        excl[:] = exclusion
        if np.any(excl < 0):
            raise UsageError("exclusion distance must be non-negative")
    fa = _filter_args(index, f)
    ids = np.empty((nq, sp.k), np.int64)
    dists = np.empty((nq, sp.k), np.float64)
    stats = np.zeros((nq, K.N_STATS), np.int64)
    ntd = np.zeros(nq, np.int64)
    t0 = time.perf_counter()
    K.batch_search(_METHODS[method], Q, *_graph_args(index), index.entry_point, index.top_layer,
                   sp.ef, sp.k, excl, sp.gamma_slack, sp.td_fraction, sp.termination_opt,
                   *fa, ids, dists, stats, ntd)
    elapsed = time.perf_counter() - t0
    return BatchResult(ids, dists, stats, ntd, elapsed, excl if method == "favor" else None)
