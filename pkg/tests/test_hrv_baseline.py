import math

import numpy as np
import pytest

from fhnhrv.errors import FeatureError, TrainingError
from fhnhrv.hrv_baseline import (
    FEATURE_NAMES,
    apen,
    central_tendency_measure,
    compute_features,
    correlation_dimension,
    pnn,
    rf_predict,
    rf_train,
    rmssd,
    sampen,
    sdnn,
    spatial_filling_index,
    triangular_index,
    write_features_csv,
)
from fhnhrv.rr_data import synth_dataset


class TestTimeDomain:
    def test_sdnn_constant_is_zero(self):
        assert sdnn([800.0, 800.0, 800.0]) == 0.0

    def test_rmssd_hand_value(self):
        assert rmssd([800.0, 820.0, 800.0]) == pytest.approx(20.0)

    def test_pnn20_hand_value(self):
        assert pnn([800.0, 825.0, 800.0], 20.0) == 1.0
        assert pnn([800.0, 810.0, 800.0], 20.0) == 0.0

    def test_apen_constant_is_zero(self):
        assert apen([800.0] * 30) == 0.0

    def test_sampen_constant_is_zero(self):
        assert sampen([800.0] * 30) == 0.0


class TestTranslationInvariance:
    def test_shift_invariant_features(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            base = rng.uniform(600, 1000, rng.integers(65, 90))
            shifted = base + 137.0
            assert sdnn(shifted) == pytest.approx(sdnn(base), rel=1e-9)
            assert rmssd(shifted) == pytest.approx(rmssd(base), rel=1e-9)
            assert pnn(shifted, 20.0) == pnn(base, 20.0)
            assert triangular_index(shifted) == pytest.approx(
                triangular_index(base), rel=1e-9
            )


def white_and_ar1(seed, n=100, sd=30.0, phi=0.9):
    """A white series and an AR(1) series with the same stationary variance."""
    rng = np.random.default_rng(seed)
    white = 800 + rng.normal(0, sd, n)
    x = np.empty(n)
    x[0] = rng.normal(0, sd)
    innov = sd * math.sqrt(1 - phi * phi)
    for i in range(1, n):
        x[i] = phi * x[i - 1] + rng.normal(0, innov)
    return white, 800 + x


class TestEntropyOrdering:
    def test_apen_textbook_value(self):
        # classic regularity example: a period-3 series is almost perfectly
        # predictable, ApEn ~ 1.1e-5 at m=2, r=3
        u = [85.0, 80.0, 89.0] * 17
        assert apen(u, m=2, r=3.0) == pytest.approx(1.0996e-5, rel=1e-3)

    def test_sampen_orders_white_above_correlated(self):
        gaps = [
            sampen(w) - sampen(a)
            for w, a in (white_and_ar1(seed) for seed in range(20))
        ]
        assert np.mean(gaps) > 0

    def test_apen_self_match_bias_at_short_length(self):
        # At n=100 with r=0.2*SDNN, canonical ApEn is biased low for the
        # *less* predictable series (scarce template matches put every C_i at
        # the self-match floor), so the white-vs-AR(1) ordering reverses.
        # The acceptance suite tracks this as a documented spec defect.
        gaps = [
            apen(w) - apen(a)
            for w, a in (white_and_ar1(seed) for seed in range(20))
        ]
        assert np.mean(gaps) < 0


class TestCorrelationDimension:
    def test_sinusoid_is_one_dimensional(self):
        t = np.arange(300)
        series = 800 + 50 * np.sin(2 * np.pi * t / 40.0)
        d = correlation_dimension(series)
        assert 0.8 <= d <= 1.3

    def test_iid_uniform_fills_the_plane(self):
        rng = np.random.default_rng(11)
        series = rng.uniform(700, 900, 300)
        assert correlation_dimension(series) > 1.6


class TestScatterFeatures:
    def test_ctm_counts_points_near_origin(self):
        # alternating small/large differences: none near the origin
        series = [800.0, 801.0, 900.0, 901.0, 800.0, 801.0, 900.0]
        assert central_tendency_measure(series, radius=0.002) == 0.0
        assert central_tendency_measure(series, radius=2.0) == 1.0

    def test_sfi_range(self):
        rng = np.random.default_rng(0)
        series = 800 + rng.normal(0, 40, 80)
        v = spatial_filling_index(series)
        assert 0.01 <= v <= 1.0


class TestComputeFeatures:
    def test_vector_shape_and_names(self):
        assert len(FEATURE_NAMES) == 23
        ds = synth_dataset(1, 2, seed=3)
        feats = compute_features(ds.segments[0])
        assert feats.values.shape == (23,)
        assert np.all(np.isfinite(feats.values))
        assert feats["sdnn"] == pytest.approx(np.std(ds.segments[0].intervals))

    def test_all_filtered_segments_finite(self):
        ds = synth_dataset(2, 5, seed=9)
        for seg in ds.segments:
            assert np.all(np.isfinite(compute_features(seg).values))

    def test_constant_series_raises(self):
        with pytest.raises(FeatureError):
            compute_features([800.0] * 70)

    def test_short_series_raises(self):
        with pytest.raises(FeatureError):
            compute_features([800.0, 810.0])

    def test_csv_export(self, tmp_path):
        ds = synth_dataset(1, 2, seed=3)
        rows = [(s.segment_id, s.label, compute_features(s).values) for s in ds.segments]
        path = tmp_path / "features.csv"
        write_features_csv(str(path), rows)
        lines = path.read_text().splitlines()
        assert lines[0] == "segment_id,label," + ",".join(FEATURE_NAMES)
        assert len(lines) == 1 + len(ds.segments)
        assert len(lines[1].split(",")) == 25


class TestRandomForest:
    def separable(self, n=60, seed=0):
        rng = np.random.default_rng(seed)
        X = rng.uniform(0, 10, (n, 23))
        y = (X[:, 0] >= 5.0).astype(int)
        return X, y

    def test_separable_training_accuracy(self):
        X, y = self.separable()
        rf = rf_train(X, y, n_trees=30, seed=1)
        preds = [rf_predict(rf, x) >= 0.5 for x in X]
        assert np.mean(np.array(preds) == y) == 1.0

    def test_same_seed_same_structure(self):
        X, y = self.separable()

        def describe(node):
            if node.is_leaf:
                return ("leaf", node.prob1)
            return ("split", node.feature, node.threshold,
                    describe(node.left), describe(node.right))

        a = rf_train(X, y, n_trees=10, seed=5)
        b = rf_train(X, y, n_trees=10, seed=5)
        assert [describe(t) for t in a.trees] == [describe(t) for t in b.trees]

    def test_tree_order_invariant_prediction(self):
        X, y = self.separable()
        rf = rf_train(X, y, n_trees=15, seed=2)
        x = X[7]
        before = rf_predict(rf, x)
        rf.trees = rf.trees[::-1]
        assert rf_predict(rf, x) == before

    def test_unanimous_votes(self):
        X, y = self.separable()
        rf = rf_train(X, y, n_trees=30, seed=3)
        far_pos = np.full(23, 9.9)
        far_neg = np.full(23, 0.1)
        assert rf_predict(rf, far_pos) == 1.0
        assert rf_predict(rf, far_neg) == 0.0

    def test_scores_in_unit_interval(self):
        X, y = self.separable()
        rf = rf_train(X, y, n_trees=30, seed=4)
        rng = np.random.default_rng(9)
        for _ in range(20):
            assert 0.0 <= rf_predict(rf, rng.uniform(0, 10, 23)) <= 1.0

    def test_single_class_rejected(self):
        X = np.random.default_rng(0).uniform(0, 1, (10, 23))
        with pytest.raises(TrainingError):
            rf_train(X, np.zeros(10, dtype=int))

    def test_feature_subset_size(self):
        X, y = self.separable()
        rf = rf_train(X, y, n_trees=2, seed=0)
        assert rf.n_features_per_split == 5  # ceil(sqrt(23))
