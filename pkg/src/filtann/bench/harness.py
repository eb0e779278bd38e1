"""Ground truth, recall/QPS sweeps, exclusion-distance ablation and the
linear distance-rank check."""

from __future__ import annotations

import csv
import hashlib
import io
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import UsageError, VectorDataset
from ..filters import FilterCondition, exact_selectivity, mask, render
from ..graph import HnswIndex
from ..search import ROUTE_BRUTE, ROUTE_GRAPH, SearchParams, batch_search, exclusion_distance
from ..selector import (SelectorConfig, brute_force_batch, draw_sample, route,
                        theoretical_relative_error)


@dataclass
class GroundTruth:
    """Exact filtered top-k per query, ids sorted by (dist, id)."""

    ids: list[np.ndarray]
    dists: list[np.ndarray]
    k: int

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def empty_queries(self) -> list[int]:
        """Queries whose TD set is empty (flagged, recall defined as 1)."""
        return [i for i, r in enumerate(self.ids) if len(r) == 0]


def compute_ground_truth(ds: VectorDataset, queries, f: FilterCondition, k: int) -> GroundTruth:
    res = brute_force_batch(ds, queries, f, k)
    ids, dists = [], []
    for row, drow in zip(res.ids, res.dists):
        m = row >= 0
        ids.append(row[m].copy())
        dists.append(drow[m].copy())
    return GroundTruth(ids, dists, k)


def recall_at_k(hits, gt_ids, k: int) -> float:
    """|hits ∩ gt| / |gt|; 1.0 when the ground truth is empty."""
    gt = [int(i) for i in gt_ids if i >= 0]
    if len(gt) > k:
        raise UsageError(f"ground truth has {len(gt)} ids, more than k={k}")
    if not gt:
        return 1.0
    got = {int(getattr(h, "id", h)) for h in hits}
    got.discard(-1)
    return len(got.intersection(gt)) / len(gt)


def mean_recall(ids: np.ndarray, gt: GroundTruth) -> float:
    return float(np.mean([recall_at_k(row, g, gt.k) for row, g in zip(ids, gt.ids)]))


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- sweep -------------------------------------------------------------------


@dataclass
class SweepSpec:
    ef_values: list[int]
    filters: list[tuple[str, FilterCondition]]
    k: int = 10
    repetitions: int = 1
    warmup_queries: int = 10
    methods: tuple[str, ...] = ("favor", "rsf", "brute_force", "hnsw_unfiltered")
    include_estimation: bool = True
    search: SearchParams = field(default_factory=SearchParams)

    def __post_init__(self):
        if not self.ef_values or any(e < 1 for e in self.ef_values):
            raise UsageError("ef_values must be a non-empty list of positive integers")
        if list(self.ef_values) != sorted(self.ef_values):
            raise UsageError("ef_values must be ascending")
        if self.k > min(self.ef_values):
            raise UsageError(f"k={self.k} exceeds the smallest ef {min(self.ef_values)}")
        names = [n for n, _ in self.filters]
        if len(set(names)) != len(names):
            raise UsageError("filter names must be unique")
        if self.repetitions < 1 or self.warmup_queries < 0:
            raise UsageError("repetitions must be positive and warmup non-negative")
        unknown = set(self.methods) - {"favor", "rsf", "brute_force", "hnsw_unfiltered"}
        if unknown:
            raise UsageError(f"unknown sweep methods {sorted(unknown)}")


SWEEP_COLUMNS = [
    "filter", "expr", "method", "ef", "k", "selectivity", "p_hat", "rel_error_theory",
    "exclusion", "recall", "qps", "dist_comps", "path_len", "td_fraction", "routes",
]


def _timed(fn, repetitions: int):
    """Best-of-``repetitions`` run of ``fn`` returning (result, seconds)."""
    best, best_t = None, float("inf")
    for _ in range(repetitions):
        t0 = time.perf_counter()
        res = fn()
        dt = time.perf_counter() - t0
        if dt < best_t:
            best, best_t = res, dt
    return best, best_t


def _stats_columns(stats: np.ndarray) -> dict:
    hops = stats[:, 1].astype(np.float64)
    frac = np.divide(stats[:, 2], hops, out=np.zeros_like(hops), where=hops > 0)
    return {
        "dist_comps": float(stats[:, 0].mean()),
        "path_len": float(hops.mean()),
        "td_fraction": float(frac.mean()),
    }


def _routes(counts: Counter) -> str:
    return ";".join(f"{r}={counts.get(r, 0)}" for r in (ROUTE_GRAPH, ROUTE_BRUTE))


def sweep(index: HnswIndex, ds: VectorDataset, queries, spec: SweepSpec, cfg: SelectorConfig,
          ground_truth: dict[str, GroundTruth]) -> list[dict]:
    """One row per (filter, ef, method); timing is single-threaded wall clock."""
    Q = np.ascontiguousarray(queries, dtype=np.float32)
    nq = len(Q)
    rows = []
    for name, f in spec.filters:
        if name not in ground_truth:
            raise UsageError(f"missing ground truth for filter {name!r}")
        gt = ground_truth[name]
        if len(gt) != nq:
            raise UsageError(f"ground truth for {name!r} covers {len(gt)} queries, expected {nq}")
        sel = exact_selectivity(f, ds)

        def estimate():
            # one sample per (filter, seed) batch, reused by every query in it
            idx = draw_sample(ds.count, cfg)
            return float(np.count_nonzero(mask(f, ds.attributes.take(idx)))) / len(idx)

        p_hat, est_t = _timed(estimate, 1)
        n = cfg.sample_size(ds.count)
        rel = theoretical_relative_error(sel, n, ds.count) if sel > 0 else float("nan")
        base = dict(filter=name, expr=render(f), k=spec.k, selectivity=sel, p_hat=p_hat,
                    rel_error_theory=rel)
        warm = Q[: spec.warmup_queries]

        bf = None
        if "brute_force" in spec.methods or route(p_hat, cfg) == ROUTE_BRUTE:
            if len(warm):
                brute_force_batch(ds, warm, f, spec.k)
            bf, bf_t = _timed(lambda: brute_force_batch(ds, Q, f, spec.k), spec.repetitions)

        for ef in spec.ef_values:
            sp = SearchParams(ef=ef, k=spec.k, gamma_slack=spec.search.gamma_slack,
                              td_fraction=spec.search.td_fraction,
                              termination_opt=spec.search.termination_opt,
                              normalize_by_ef=spec.search.normalize_by_ef)
            for method in spec.methods:
                row = dict(base, method=method, ef=ef, exclusion=0.0)
                if method == "brute_force":
                    res, secs, routes = bf, bf_t, Counter({ROUTE_BRUTE: nq})
                elif method == "favor" and route(p_hat, cfg) == ROUTE_BRUTE:
                    res, secs, routes = bf, bf_t, Counter({ROUTE_BRUTE: nq})
                    secs += est_t if spec.include_estimation else 0.0
                else:
                    kind = {"favor": "favor", "rsf": "rsf", "hnsw_unfiltered": "hnsw"}[method]
                    D = None
                    if kind == "favor":
                        D = 0.0 if p_hat == 1.0 else exclusion_distance(p_hat, sp, index.delta_d)
                        row["exclusion"] = D
                    if len(warm):
                        batch_search(index, warm, f, sp, kind, exclusion=D)
                    res, _ = _timed(lambda: batch_search(index, Q, f, sp, kind, exclusion=D),
                                    spec.repetitions)
                    secs = res.elapsed
                    if kind == "favor" and spec.include_estimation:
                        secs += est_t
                    routes = Counter({ROUTE_GRAPH: nq})
                row.update(recall=mean_recall(res.ids, gt), qps=nq / secs if secs > 0 else float("inf"),
                           routes=_routes(routes), **_stats_columns(res.stats))
                rows.append(row)
    return rows


def write_csv(rows: list[dict], path, columns=None, header_comments: dict | None = None) -> None:
    columns = columns or (list(rows[0]) if rows else [])
    buf = io.StringIO()
    for key, val in (header_comments or {}).items():
        buf.write(f"# {key}={val}\n")
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


def at_recall(recalls, values, target: float) -> float | None:
    """Linearly interpolate ``values`` at ``target`` recall along an ef sweep.

    Uses the first adjacent pair of sweep points bracketing ``target``;
    returns None when the sweep never reaches it.
    """
    r = np.asarray(recalls, np.float64)
    v = np.asarray(values, np.float64)
    for i in range(len(r)):
        if r[i] == target:
            return float(v[i])
        if i and min(r[i - 1], r[i]) < target < max(r[i - 1], r[i]):
            t = (target - r[i - 1]) / (r[i] - r[i - 1])
            return float(v[i - 1] + t * (v[i] - v[i - 1]))
    return None


# -- exclusion-distance ablation ------------------------------------------------


def _scan_distances(vectors: np.ndarray, q: np.ndarray) -> np.ndarray:
    diff = vectors.astype(np.float64) - q.astype(np.float64)
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def max_exclusion(ds: VectorDataset, queries, f: FilterCondition) -> np.ndarray:
    """Per query: max TD distance minus min NTD distance, by full scan (floored at 0)."""
    Q = np.atleast_2d(np.asarray(queries, np.float32))
    td = mask(f, ds.attributes)
    out = np.zeros(len(Q))
    if td.all() or not td.any():
        return out
    for i, q in enumerate(Q):
        d = _scan_distances(ds.vectors, q)
        out[i] = max(0.0, d[td].max() - d[~td].min())
    return out


ABLATION_COLUMNS = ["strategy", "ef", "k", "p_hat", "exclusion_mean", "recall", "qps",
                    "dist_comps", "path_len", "td_fraction"]


def ablation_exclusion(index: HnswIndex, ds: VectorDataset, queries, f: FilterCondition,
                       sp: SearchParams, gt: GroundTruth, cfg: SelectorConfig | None = None,
                       ef_values=None) -> list[dict]:
    """favor search under D0 = 0, the normalized rank-gap formula, and the per-query D_max."""
    cfg = cfg or SelectorConfig()
    Q = np.ascontiguousarray(queries, dtype=np.float32)
    p_hat = float(np.count_nonzero(mask(f, ds.attributes.take(draw_sample(ds.count, cfg))))) \
        / cfg.sample_size(ds.count)
    if p_hat == 0.0:
        raise UsageError("estimated selectivity is 0; nothing to ablate")
    dmax = max_exclusion(ds, Q, f)
    rows = []
    for ef in ef_values or [sp.ef]:
        s = SearchParams(ef=ef, k=sp.k, gamma_slack=sp.gamma_slack, td_fraction=sp.td_fraction,
                         termination_opt=sp.termination_opt, normalize_by_ef=sp.normalize_by_ef)
        eq = 0.0 if p_hat == 1.0 else exclusion_distance(p_hat, s, index.delta_d)
        for name, D in (("D0", 0.0), ("formula", eq), ("Dmax", dmax)):
            res = batch_search(index, Q, f, s, "favor", exclusion=D)
            rows.append(dict(strategy=name, ef=ef, k=s.k, p_hat=p_hat,
                             exclusion_mean=float(np.mean(D)), recall=mean_recall(res.ids, gt),
                             qps=len(Q) / res.elapsed if res.elapsed > 0 else float("inf"),
                             **_stats_columns(res.stats)))
    return rows


# -- linear model ----------------------------------------------------------------


@dataclass
class LinearReport:
    mean_r2: float
    std_r2: float
    r2: np.ndarray
    degenerate: int  # anchors whose m-NN distances have zero variance

    @property
    def is_degenerate(self) -> bool:
        return self.degenerate > 0


def r_squared(y: np.ndarray) -> float | None:
    """OLS fit of y against ranks 1..len(y); None when y has zero variance."""
    y = np.asarray(y, np.float64)
    m = np.arange(1, len(y) + 1, dtype=np.float64)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return None
    mc = m - m.mean()
    slope = float((mc * (y - y.mean())).sum() / (mc * mc).sum())
    icept = y.mean() - slope * m.mean()
    ss_res = float(((y - (icept + slope * m)) ** 2).sum())
    return 1.0 - ss_res / ss_tot


def verify_linear_model(ds: VectorDataset, anchors: int, m_max: int, seed: int = 0,
                        anchor_ids=None) -> LinearReport:
    if anchors < 1 or m_max < 2:
        raise UsageError("need anchors >= 1 and m_max >= 2")
    if m_max >= ds.count:
        raise UsageError(f"m_max={m_max} must be smaller than the dataset size {ds.count}")
    if anchor_ids is None:
        anchor_ids = np.random.default_rng(seed).choice(ds.count, size=min(anchors, ds.count),
                                                        replace=False)
    vals, degenerate = [], 0
    for a in anchor_ids:
        d = _scan_distances(ds.vectors, ds.vectors[a])
        d[a] = np.inf  # the anchor is not its own neighbour
        nn = np.sort(np.partition(d, m_max - 1)[:m_max])
        r2 = r_squared(nn)
        if r2 is None:
            degenerate += 1
        else:
            vals.append(r2)
    r2 = np.array(vals)
    mean = float(r2.mean()) if len(r2) else float("nan")
    std = float(r2.std()) if len(r2) else float("nan")
    return LinearReport(mean, std, r2, degenerate)


def exact_delta_d(ds: VectorDataset, anchor_ids, alpha: int, beta: int) -> float:
    """Mean of (d_beta - d_alpha) / (beta - alpha) over anchors, by exact scan."""
    vals = []
    for a in anchor_ids:
        d = _scan_distances(ds.vectors, ds.vectors[a])
        d[a] = np.inf
        nn = np.sort(np.partition(d, beta - 1)[:beta])
        vals.append((nn[beta - 1] - nn[alpha - 1]) / (beta - alpha))
    return float(np.mean(vals))
