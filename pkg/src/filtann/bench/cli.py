"""``filtann`` command line.

Exit codes: 0 success, 2 usage or parse error, 3 data or format error,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np

from ..core import DataError, UsageError, VectorDataset
from ..filters import FilterSyntaxError, parse_filter
from ..graph import BuildError, BuildParams, build, load, save
from ..search import ROUTE_BRUTE, ROUTE_GRAPH, SearchParams, batch_search, exclusion_distance
from ..selector import SelectorConfig, brute_force_batch, estimate_selectivity, route
from . import harness, io
from .datasets import synthesize_attributes

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")


def _dataset(args) -> VectorDataset:
    return io.load_dataset(args.vectors, args.format, getattr(args, "attrs", None))


def _queries(args, dim: int) -> np.ndarray:
    q = io.read_vectors(args.queries, args.queries_format or args.format)
    if q.shape[1] != dim:
        raise DataError(f"queries have dimension {q.shape[1]}, dataset has {dim}")
    return q


def _filter(text: str, ds: VectorDataset):
    return parse_filter(text, ds.attributes.arity)


def _search_params(args, ef: int) -> SearchParams:
    return SearchParams(ef=ef, k=args.k, gamma_slack=args.gamma, td_fraction=args.td_fraction,
                        termination_opt=not args.no_term_opt, normalize_by_ef=not args.no_ef_norm)


def _selector(args) -> SelectorConfig:
    return SelectorConfig(lambda_threshold=args.lam, sample_fraction=args.sample_frac, seed=args.seed)


# -- commands ------------------------------------------------------------------


def cmd_build(args) -> int:
    ds = _dataset(args)
    params = BuildParams(M=args.m, efc=args.efc, seed=args.seed)
    t0 = time.perf_counter()
    index = build(ds, params)
    save(index, args.out)
    print(f"built {index.count} nodes, top layer {index.top_layer}, delta_d={index.delta_d:.6g} "
          f"in {time.perf_counter() - t0:.1f}s -> {args.out}")
    return EXIT_OK


def cmd_synth_attrs(args) -> int:
    if args.count < 0:
        raise UsageError("--count must be non-negative")
    table = synthesize_attributes(args.count, args.bools, args.ints, args.floats, args.seed)
    io.write_attributes(args.out, table)
    print(f"wrote {args.count} attribute records -> {args.out}")
    return EXIT_OK


def cmd_gt(args) -> int:
    ds = _dataset(args)
    q = _queries(args, ds.dim)
    gt = harness.compute_ground_truth(ds, q, _filter(args.filter, ds), args.k)
    io.write_ivecs(args.out, gt.ids)
    empty = gt.empty_queries
    if empty:
        print(f"warning: {len(empty)} queries have no target data (empty records)", file=sys.stderr)
    print(f"wrote ground truth for {len(gt)} queries -> {args.out}")
    return EXIT_OK


def _load_gt(path, nq: int, k: int) -> harness.GroundTruth:
    rows = io.read_ivecs(path)
    if len(rows) != nq:
        raise DataError(f"{path}: {len(rows)} ground-truth records for {nq} queries")
    if any(len(r) > k for r in rows):
        raise DataError(f"{path}: ground-truth records longer than k={k}")
    return harness.GroundTruth(rows, [np.zeros(len(r)) for r in rows], k)


def cmd_search(args) -> int:
    ds = _dataset(args)
    index = load(args.index, ds)
    q = _queries(args, ds.dim)
    f = _filter(args.filter, ds)
    sp = _search_params(args, args.ef)
    cfg = _selector(args)
    gt = _load_gt(args.gt, len(q), args.k) if args.gt else None

    t0 = time.perf_counter()
    p_hat = estimate_selectivity(f, ds, cfg)
    est = time.perf_counter() - t0
    method = args.method
    if method == "auto":
        method = "brute" if route(p_hat, cfg) == ROUTE_BRUTE else "favor"
    D = 0.0
    if method == "brute":
        res = brute_force_batch(ds, q, f, args.k)
    else:
        if method == "favor":
            if p_hat == 0.0:
                raise UsageError("estimated selectivity is 0; use --method auto or brute")
            D = 0.0 if p_hat == 1.0 else exclusion_distance(p_hat, sp, index.delta_d)
        res = batch_search(index, q, f, sp, method, exclusion=D if method == "favor" else None)
    secs = res.elapsed + (est if args.method in ("favor", "auto") and not args.exclude_estimation else 0.0)
    stats = harness._stats_columns(res.stats)
    row = dict(method=method, ef=args.ef, k=args.k, p_hat=p_hat, exclusion=D,
               route=ROUTE_BRUTE if method == "brute" else ROUTE_GRAPH,
               recall=harness.mean_recall(res.ids, gt) if gt else float("nan"),
               qps=len(q) / secs if secs > 0 else float("inf"), **stats)
    if args.csv:
        harness.write_csv([row], args.csv, header_comments={"index_sha256": harness.file_sha256(args.index)})
    print(", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    return EXIT_OK


def _read_filter_file(path, ds) -> list:
    filters = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, sep, expr = line.partition(":")
        if not sep or not name.strip():
            raise UsageError(f"{path}:{lineno}: expected 'name: expression'")
        filters.append((name.strip(), _filter(expr.strip(), ds)))
    if not filters:
        raise UsageError(f"{path}: no filters defined")
    return filters


def cmd_sweep(args) -> int:
    ds = _dataset(args)
    index = load(args.index, ds)
    q = _queries(args, ds.dim)
    filters = _read_filter_file(args.filters, ds)
    spec = harness.SweepSpec(ef_values=args.ef, filters=filters, k=args.k,
                             repetitions=args.repetitions, warmup_queries=args.warmup,
                             include_estimation=not args.exclude_estimation,
                             search=_search_params(args, max(args.ef)))
    gts = {name: harness.compute_ground_truth(ds, q, f, args.k) for name, f in filters}
    rows = harness.sweep(index, ds, q, spec, _selector(args), gts)
    harness.write_csv(rows, args.csv, harness.SWEEP_COLUMNS,
                      {"index_sha256": harness.file_sha256(args.index)})
    print(f"wrote {len(rows)} rows -> {args.csv}")
    return EXIT_OK


def cmd_ablate_d(args) -> int:
    ds = _dataset(args)
    index = load(args.index, ds)
    q = _queries(args, ds.dim)
    f = _filter(args.filter, ds)
    gt = harness.compute_ground_truth(ds, q, f, args.k)
    sp = _search_params(args, max(args.ef))
    rows = harness.ablation_exclusion(index, ds, q, f, sp, gt, _selector(args), ef_values=args.ef)
    harness.write_csv(rows, args.csv, harness.ABLATION_COLUMNS,
                      {"index_sha256": harness.file_sha256(args.index)})
    print(f"wrote {len(rows)} rows -> {args.csv}")
    return EXIT_OK


def cmd_verify_linear(args) -> int:
    ds = io.load_dataset(args.vectors, args.format)
    rep = harness.verify_linear_model(ds, args.anchors, args.m_max, seed=args.seed)
    print(f"mean_r2={rep.mean_r2:.4f} std_r2={rep.std_r2:.4f} anchors={len(rep.r2)} "
          f"degenerate={rep.degenerate}")
    if rep.is_degenerate:
        print(f"warning: {rep.degenerate} anchors have zero-variance neighbour distances",
              file=sys.stderr)
    if args.csv:
        harness.write_csv([dict(mean_r2=rep.mean_r2, std_r2=rep.std_r2, anchors=len(rep.r2),
                                degenerate=rep.degenerate, m_max=args.m_max)], args.csv)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def _add_dataset(p, attrs=True):
    p.add_argument("--vectors", required=True)
    p.add_argument("--format", choices=io.FORMATS, default="fvecs")
    if attrs:
        p.add_argument("--attrs", help="attribute file (FVRA)")


def _add_queries(p):
    p.add_argument("--queries", required=True)
    p.add_argument("--queries-format", choices=io.FORMATS, default=None,
                   help="defaults to --format")


def _add_search_knobs(p):
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--td-fraction", type=float, default=0.5)
    p.add_argument("--no-term-opt", action="store_true")
    p.add_argument("--no-ef-norm", action="store_true")
    p.add_argument("--lambda", dest="lam", type=float, default=0.01)
    p.add_argument("--sample-frac", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0, help="selectivity sampling seed")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="filtann", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build", help="build an index over a vector file")
    _add_dataset(p)
    p.add_argument("--m", type=int, default=32)
    p.add_argument("--efc", type=int, default=40)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("synth-attrs", help="generate a synthetic attribute file")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--bools", type=int, default=1)
    p.add_argument("--ints", type=int, default=2)
    p.add_argument("--floats", type=int, default=1)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_attrs)

    p = sub.add_parser("gt", help="exact filtered top-k ground truth (ivecs)")
    _add_dataset(p)
    _add_queries(p)
    p.add_argument("--filter", default="true")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gt)

    p = sub.add_parser("search", help="run one filtered query batch")
    p.add_argument("--index", required=True)
    _add_dataset(p)
    _add_queries(p)
    p.add_argument("--filter", default="true")
    p.add_argument("--ef", type=int, default=100)
    p.add_argument("--method", choices=("favor", "rsf", "brute", "auto"), default="auto")
    p.add_argument("--gt")
    p.add_argument("--csv")
    p.add_argument("--exclude-estimation", action="store_true",
                   help="leave selectivity-estimation time out of QPS")
    _add_search_knobs(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("sweep", help="recall/QPS sweep over ef values and filters")
    p.add_argument("--index", required=True)
    _add_dataset(p)
    _add_queries(p)
    p.add_argument("--filters", required=True, help="file of 'name: expression' lines")
    p.add_argument("--ef", type=_int_list, required=True)
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--exclude-estimation", action="store_true")
    p.add_argument("--csv", required=True)
    _add_search_knobs(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate-d", help="compare exclusion-distance strategies")
    p.add_argument("--index", required=True)
    _add_dataset(p)
    _add_queries(p)
    p.add_argument("--filter", required=True)
    p.add_argument("--ef", type=_int_list, default=[100])
    p.add_argument("--csv", required=True)
    _add_search_knobs(p)
    p.set_defaults(func=cmd_ablate_d)

    p = sub.add_parser("verify-linear", help="R^2 of the linear distance-rank model")
    _add_dataset(p, attrs=False)
    p.add_argument("--anchors", type=int, default=100)
    p.add_argument("--m-max", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_verify_linear)
    return parser


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
        return args.func(args)
    except (UsageError, FilterSyntaxError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, BuildError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # invariant violations surface as exit 4
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
