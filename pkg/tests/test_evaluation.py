"""Thresholds, labeling, projection, histogram and box-stat exports."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loopguard import (
    box_stats,
    classify,
    latent_report,
    make_rng,
    percentile_threshold,
    project_2d,
    score_histogram,
    threshold_report,
)


class TestPercentileThreshold:
    def test_constant_scores(self):
        assert percentile_threshold([7.0] * 12, 0.95) == 7.0

    def test_linear_interpolation(self):
        scores = np.arange(1, 101, dtype=float)
        assert percentile_threshold(scores, 0.95) == pytest.approx(95.05)

    def test_midpoint(self):
        assert percentile_threshold([0.0, 10.0], 0.5) == pytest.approx(5.0)

    def test_matches_numpy_linear_quantile(self):
        scores = make_rng(1).normal(size=257)
        for q in (0.25, 0.5, 0.9, 0.95, 0.99):
            assert percentile_threshold(scores, q) == pytest.approx(np.quantile(scores, q), rel=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            percentile_threshold([], 0.95)

    def test_q_bounds(self):
        with pytest.raises(ValueError):
            percentile_threshold([1.0], 1.0)


class TestClassify:
    def test_boundary_is_normal(self):
        assert not classify(np.array([5.0]), 5.0)[0]

    def test_just_above_is_anomaly(self):
        assert classify(np.array([5.0 + 1e-12]), 5.0)[0]

    def test_flagged_fraction_bound(self):
        scores = make_rng(2).normal(size=400)  # continuous, all distinct
        thr = percentile_threshold(scores, 0.95)
        assert np.mean(classify(scores, thr)) <= 0.05

    def test_monotone_in_threshold(self):
        scores = make_rng(3).normal(size=100)
        low = classify(scores, 0.0)
        high = classify(scores, 1.0)
        assert not np.any(high & ~low)  # raising the threshold never adds anomalies

    def test_nonfinite_threshold_rejected(self):
        with pytest.raises(ValueError):
            classify(np.zeros(3), np.nan)


class TestThresholdReport:
    def test_fractions(self):
        train = np.arange(100, dtype=float)
        val = np.array([200.0, -5.0])
        rep = threshold_report(train, val, 0.95)
        assert rep.threshold == pytest.approx(94.05)
        assert rep.train_flagged_fraction == pytest.approx(0.05)
        assert rep.val_flagged_fraction == pytest.approx(0.5)


class TestProject2d:
    def test_rank_one_evr(self):
        t = np.linspace(-1, 1, 20)
        X = np.column_stack([t, 2 * t, -t])
        proj = project_2d(X)
        assert proj.evr[0] == pytest.approx(1.0)
        assert proj.evr[1] == pytest.approx(0.0, abs=1e-12)

    def test_rank_two_evr_sums_to_one(self):
        rng = make_rng(4)
        basis = np.linalg.qr(rng.normal(size=(6, 2)))[0].T
        X = rng.normal(size=(30, 2)) @ basis
        proj = project_2d(X)
        assert proj.evr[0] + proj.evr[1] == pytest.approx(1.0, abs=1e-9)
        assert proj.evr[0] >= proj.evr[1]

    def test_matches_svd_oracle_up_to_sign(self):
        X = make_rng(5).normal(size=(40, 7))
        proj = project_2d(X)
        Xc = X - X.mean(axis=0)
        _, _, vt = np.linalg.svd(Xc, full_matrices=False)
        expected = Xc @ vt[:2].T
        for j in range(2):
            col, exp = proj.coords[:, j], expected[:, j]
            assert np.allclose(col, exp, atol=1e-8) or np.allclose(col, -exp, atol=1e-8)

    def test_evr_rotation_invariant(self):
        rng = make_rng(6)
        X = rng.normal(size=(50, 5)) * np.array([3.0, 2.0, 1.0, 0.5, 0.1])
        Q = np.linalg.qr(rng.normal(size=(5, 5)))[0]
        a, b = project_2d(X), project_2d(X @ Q)
        assert a.evr[0] == pytest.approx(b.evr[0], rel=1e-9)
        assert a.evr[1] == pytest.approx(b.evr[1], rel=1e-9)

    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError, match="variance"):
            project_2d(np.ones((5, 3)))

    def test_shape_requirements(self):
        with pytest.raises(ValueError):
            project_2d(np.zeros((2, 5)))
        with pytest.raises(ValueError):
            project_2d(np.zeros((5, 1)))


class TestScoreHistogram:
    def test_degenerate_range_single_bin(self):
        hist = score_histogram([3.0] * 10, [], n_bins=5)
        assert hist.train_counts.sum() == 10
        assert (hist.train_counts > 0).sum() == 1

    def test_hand_binning(self):
        hist = score_histogram([0.0, 1.0, 2.0, 3.0], [4.0], n_bins=5)
        assert np.array_equal(hist.train_counts, [1, 1, 1, 1, 0])
        assert np.array_equal(hist.val_counts, [0, 0, 0, 0, 1])

    def test_conservation(self):
        tr = make_rng(7).normal(size=123)
        va = make_rng(8).normal(size=45)
        hist = score_histogram(tr, va, n_bins=17)
        assert hist.train_counts.sum() == 123
        assert hist.val_counts.sum() == 45

    def test_permutation_invariance(self):
        tr = make_rng(9).normal(size=50)
        h1 = score_histogram(tr, [], 10)
        h2 = score_histogram(tr[::-1], [], 10)
        assert np.array_equal(h1.train_counts, h2.train_counts)


class TestLatentReport:
    def test_heatmap_passthrough(self):
        L = make_rng(10).normal(size=(20, 32))
        rep = latent_report(L, n_bins=8)
        assert np.array_equal(rep.heatmap, L)
        assert len(rep.per_dimension_histograms) == 32

    def test_constant_dimension_single_bin(self):
        L = make_rng(11).normal(size=(15, 4))
        L[:, 2] = 1.5
        rep = latent_report(L, n_bins=6)
        assert (rep.per_dimension_histograms[2].train_counts > 0).sum() == 1

    def test_per_dimension_conservation(self):
        L = make_rng(12).normal(size=(25, 6))
        rep = latent_report(L, n_bins=9)
        for hist in rep.per_dimension_histograms:
            assert hist.train_counts.sum() == 25


class TestBoxStats:
    def test_simple_five_points(self):
        stats = box_stats([1.0, 2.0, 3.0, 4.0, 5.0])
        assert (stats.q1, stats.median, stats.q3) == (2.0, 3.0, 4.0)
        assert (stats.whisker_low, stats.whisker_high) == (1.0, 5.0)
        assert stats.outliers == []

    def test_all_equal(self):
        stats = box_stats([2.0] * 9)
        assert stats.q1 == stats.median == stats.q3 == 2.0
        assert stats.whisker_low == stats.whisker_high == 2.0
        assert stats.outliers == []

    def test_outlier_detected(self):
        stats = box_stats([1.0, 2.0, 3.0, 4.0, 100.0])
        assert stats.outliers == [100.0]
        assert stats.whisker_high == 4.0

    def test_permutation_invariance(self):
        vals = list(make_rng(13).normal(size=31))
        assert box_stats(vals) == box_stats(vals[::-1])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(min_value=-1e6, max_value=1e6), min_size=1, max_size=200))
    def test_ordering_invariants(self, vals):
        stats = box_stats(vals)
        assert stats.q1 <= stats.median <= stats.q3
        assert min(vals) <= stats.whisker_low <= stats.whisker_high <= max(vals)
