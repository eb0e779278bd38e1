import numpy as np
import pytest

from filtann.bench import harness
from filtann.core import AttributeTable, UsageError, VectorDataset, euclidean
from filtann.filters import TRUE, BoolEq, IntEq, Not
from filtann.search import SearchParams, batch_search
from filtann.selector import SelectorConfig


class TestGroundTruth:
    def test_query_on_stored_vector(self, small_ds):
        gt = harness.compute_ground_truth(small_ds, small_ds.vectors[[17, 400]], TRUE, 1)
        assert [r.tolist() for r in gt.ids] == [[17], [400]]

    def test_matches_naive_double_loop(self):
        rng = np.random.default_rng(21)
        X = rng.random((100, 4), dtype=np.float32)
        flags = rng.integers(0, 2, (100, 1)).astype(np.uint8)
        ds = VectorDataset(X, AttributeTable(flags, np.zeros((100, 0)), np.zeros((100, 0))))
        Q = rng.random((10, 4), dtype=np.float32)
        gt = harness.compute_ground_truth(ds, Q, BoolEq(0, True), 5)
        for qi, q in enumerate(Q):
            best = []
            for i in range(100):
                if flags[i, 0]:
                    best.append((euclidean(X[i], q), i))
            best.sort()
            assert gt.ids[qi].tolist() == [i for _, i in best[:5]]
            assert np.allclose(gt.dists[qi], [d for d, _ in best[:5]])

    def test_empty_td_set_flagged(self, small_ds):
        gt = harness.compute_ground_truth(small_ds, small_ds.vectors[:3], Not(TRUE), 10)
        assert all(len(r) == 0 for r in gt.ids)
        assert gt.empty_queries == [0, 1, 2]


class TestRecall:
    def test_identical(self):
        assert harness.recall_at_k([1, 2, 3], [3, 2, 1], 3) == 1.0

    def test_disjoint(self):
        assert harness.recall_at_k([4, 5], [1, 2], 2) == 0.0

    def test_seven_of_ten(self):
        hits = list(range(7)) + [70, 80, 90]
        assert harness.recall_at_k(hits, range(10), 10) == pytest.approx(0.7)

    def test_empty_ground_truth(self):
        assert harness.recall_at_k([], [], 10) == 1.0

    def test_padding_ignored(self):
        assert harness.recall_at_k([1, -1, -1], [1], 3) == 1.0

    def test_oversized_ground_truth(self):
        with pytest.raises(UsageError):
            harness.recall_at_k([1], [1, 2, 3], 2)


class TestAtRecall:
    def test_interpolates(self):
        assert harness.at_recall([0.8, 0.9, 1.0], [300, 200, 100], 0.95) == pytest.approx(150)

    def test_exact_point(self):
        assert harness.at_recall([0.8, 0.9], [3, 2], 0.9) == 2

    def test_unreached(self):
        assert harness.at_recall([0.5, 0.6], [3, 2], 0.9) is None


@pytest.fixture(scope="module")
def small_sweep(small_index, small_ds, small_queries):
    filters = [("all", TRUE), ("half", BoolEq(0, True)), ("tenth", IntEq(0, 3))]
    spec = harness.SweepSpec(ef_values=[10, 20, 40, 80, 160], filters=filters, k=10,
                             warmup_queries=5)
    gts = {n: harness.compute_ground_truth(small_ds, small_queries, f, 10) for n, f in filters}
    return harness.sweep(small_index, small_ds, small_queries, spec, SelectorConfig(), gts)


class TestSweep:
    def test_row_count_and_ranges(self, small_sweep):
        assert len(small_sweep) == 3 * 5 * 4
        for row in small_sweep:
            assert 0.0 <= row["recall"] <= 1.0
            assert row["qps"] > 0

    def test_true_filter_reduces_to_plain(self, small_sweep):
        rows = [r for r in small_sweep if r["filter"] == "all"]
        for ef in (10, 20, 40, 80, 160):
            fav = next(r for r in rows if r["ef"] == ef and r["method"] == "favor")
            plain = next(r for r in rows if r["ef"] == ef and r["method"] == "hnsw_unfiltered")
            assert fav["recall"] == plain["recall"]
            assert fav["dist_comps"] == plain["dist_comps"]
            assert fav["exclusion"] == 0.0

    def test_brute_force_exact(self, small_sweep):
        assert all(r["recall"] == 1.0 for r in small_sweep if r["method"] == "brute_force")

    def test_recall_monotone_in_ef(self, small_sweep):
        pairs = ok = 0
        for name in ("all", "half", "tenth"):
            for method in ("favor", "rsf", "hnsw_unfiltered"):
                rec = [r["recall"] for r in small_sweep if r["filter"] == name and r["method"] == method]
                for a, b in zip(rec, rec[1:]):
                    pairs += 1
                    ok += b >= a
        assert ok >= 0.95 * pairs

    def test_estimation_columns(self, small_sweep):
        # 1000 records with a 1000-record minimum sample: the estimate is a census
        half = next(r for r in small_sweep if r["filter"] == "half")
        assert half["p_hat"] == half["selectivity"]
        assert half["rel_error_theory"] == 0.0

    def test_missing_ground_truth(self, small_index, small_ds, small_queries):
        spec = harness.SweepSpec(ef_values=[10], filters=[("x", TRUE)])
        with pytest.raises(UsageError, match="missing ground truth"):
            harness.sweep(small_index, small_ds, small_queries, spec, SelectorConfig(), {})

    def test_spec_validation(self):
        with pytest.raises(UsageError):
            harness.SweepSpec(ef_values=[20, 10], filters=[])
        with pytest.raises(UsageError):
            harness.SweepSpec(ef_values=[5], filters=[], k=10)
        with pytest.raises(UsageError):
            harness.SweepSpec(ef_values=[10], filters=[("a", TRUE), ("a", TRUE)])

    def test_csv_header(self, small_sweep, tmp_path):
        p = tmp_path / "s.csv"
        harness.write_csv(small_sweep, p, harness.SWEEP_COLUMNS, {"index_sha256": "abc"})
        lines = p.read_text().splitlines()
        assert lines[0] == "# index_sha256=abc"
        assert lines[1].split(",") == harness.SWEEP_COLUMNS
        assert len(lines) == 2 + len(small_sweep)


class TestAblation:
    @pytest.fixture(scope="class")
    @staticmethod
    def rows(small_index, small_ds, small_queries):
        f = IntEq(0, 3)
        gt = harness.compute_ground_truth(small_ds, small_queries, f, 10)
        return harness.ablation_exclusion(small_index, small_ds, small_queries, f,
                                          SearchParams(ef=40, k=10), gt, ef_values=[20, 40, 80])

    def test_d0_matches_disabled_exclusion(self, rows, small_index, small_ds, small_queries):
        f = IntEq(0, 3)
        gt = harness.compute_ground_truth(small_ds, small_queries, f, 10)
        for ef in (20, 40, 80):
            d0 = next(r for r in rows if r["strategy"] == "D0" and r["ef"] == ef)
            res = batch_search(small_index, small_queries, f, SearchParams(ef=ef, k=10), "favor",
                               exclusion=0.0)
            assert d0["recall"] == harness.mean_recall(res.ids, gt)
            assert d0["dist_comps"] == res.stats[:, 0].mean()

    def test_dmax_by_scan(self, small_ds, small_queries):
        f = BoolEq(0, True)
        got = harness.max_exclusion(small_ds, small_queries[:3], f)
        td = small_ds.attributes.bools[:, 0] == 1
        for q, g in zip(small_queries[:3], got):
            d = np.linalg.norm(small_ds.vectors.astype(np.float64) - q, axis=1)
            assert g == pytest.approx(max(0.0, d[td].max() - d[~td].min()))


@pytest.mark.slow
class TestAblationDesk:
    """Equality_int (p = 0.1) on the 100k synthetic index."""

    EF = [20, 40, 80, 120, 160, 240, 320]

    @pytest.fixture(scope="class")
    @staticmethod
    def rows(desk_index, desk_ds, desk_q):
        f = IntEq(0, 3)
        Q = desk_q[:200]
        gt = harness.compute_ground_truth(desk_ds, Q, f, 10)
        return harness.ablation_exclusion(desk_index, desk_ds, Q, f, SearchParams(k=10), gt,
                                          ef_values=TestAblationDesk.EF)

    def _curve(self, rows, strategy, col):
        sel = [r for r in rows if r["strategy"] == strategy]
        return [r["recall"] for r in sel], [r[col] for r in sel]

    def test_dmax_recall_not_above_formula(self, rows):
        for ef in self.EF:
            by = {r["strategy"]: r for r in rows if r["ef"] == ef}
            assert by["Dmax"]["recall"] <= by["formula"]["recall"]

    def test_formula_qps_at_least_d0(self, rows):
        fq = harness.at_recall(*self._curve(rows, "formula", "qps"), 0.9)
        dq = harness.at_recall(*self._curve(rows, "D0", "qps"), 0.9)
        assert fq is not None and dq is not None
        assert fq >= dq


class TestLinearModel:
    def test_grid_endpoint_exact(self):
        ds = VectorDataset(np.arange(201, dtype=np.float32).reshape(-1, 1))
        rep = harness.verify_linear_model(ds, 1, 200, anchor_ids=[0])
        assert rep.r2.tolist() == [1.0]
        assert rep.degenerate == 0

    def test_duplicates_flagged(self):
        ds = VectorDataset(np.ones((50, 3), np.float32))
        rep = harness.verify_linear_model(ds, 5, 20)
        assert rep.is_degenerate and rep.degenerate == 5

    def test_m_max_too_large(self):
        ds = VectorDataset(np.zeros((10, 2), np.float32))
        with pytest.raises(UsageError):
            harness.verify_linear_model(ds, 2, 10)

    def test_r_squared_hand_example(self):
        # y = (1, 3, 2): fitted slope 0.5, SS_res = 1.5, SS_tot = 2
        assert harness.r_squared([1.0, 3.0, 2.0]) == pytest.approx(0.25)

    def test_exact_delta_d_on_grid(self):
        ds = VectorDataset(np.arange(201, dtype=np.float32).reshape(-1, 1))
        assert harness.exact_delta_d(ds, [0, 200], 10, 40) == 1.0
