import numpy as np
import pytest

from sparsecf.metrics import (
    MetricsReport,
    embed_2d,
    precision_metric,
    saliency_roc,
    similarity_metric,
    smoothness_metric,
    sparsity_metric,
)


from helpers import mann_whitney_auc  # noqa: E402


class TestPrecision:
    def test_perfect(self):
        probs = np.tile([0.0, 1.0], (5, 1))
        assert precision_metric(probs, 1) == 0.0

    def test_uniform_binary(self):
        assert precision_metric(np.array([[0.5, 0.5]]), 1) == pytest.approx(0.7071, abs=1e-4)

    def test_monotone_along_segment(self):
        start = np.array([[0.8, 0.1, 0.1]])
        onehot = np.array([[0.0, 1.0, 0.0]])
        last = np.inf
        for alpha in np.linspace(0, 1, 11):
            value = precision_metric((1 - alpha) * start + alpha * onehot, 1)
            assert value <= last + 1e-12
            last = value
        assert last == pytest.approx(0.0)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(0)
        probs = rng.dirichlet(np.ones(3), size=20)
        perm = rng.permutation(20)
        assert precision_metric(probs, 2) == pytest.approx(precision_metric(probs[perm], 2))


class TestSimilarity:
    def test_identical(self):
        q = np.random.default_rng(1).standard_normal((3, 2, 2))
        assert similarity_metric(q, q) == 0.0

    def test_half_everywhere(self):
        q = np.zeros((1, 2, 2))
        assert similarity_metric(q, q + 0.5) == pytest.approx(0.5)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(2)
        q = rng.standard_normal((10, 3, 4))
        cf = rng.standard_normal((10, 3, 4))
        perm = rng.permutation(10)
        assert similarity_metric(q, cf) == pytest.approx(similarity_metric(q[perm], cf[perm]))


class TestSparsity:
    def test_identical(self):
        q = np.ones((2, 2, 2))
        assert sparsity_metric(q, q, np.ones(2, bool)) == 0.0

    def test_one_of_four_cells(self):
        q = np.zeros((1, 2, 2))
        cf = q.copy()
        cf[0, 0, 0] = 1.0
        assert sparsity_metric(q, cf, np.ones(2, bool)) == pytest.approx(0.25)

    def test_below_tolerance_ignored(self):
        q = np.zeros((1, 2, 2))
        cf = q + 1e-9
        assert sparsity_metric(q, cf, np.ones(2, bool), zero_tol=1e-8) == 0.0
        assert sparsity_metric(q, cf, np.ones(2, bool), zero_tol=0.0) == 1.0

    def test_only_mutable_features_counted(self):
        q = np.zeros((1, 2, 3))
        cf = q + 1.0
        mask = np.array([True, False, False])
        assert sparsity_metric(q, cf, mask) == pytest.approx(1.0)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(3)
        q = rng.standard_normal((8, 3, 3))
        cf = q + (rng.random((8, 3, 3)) > 0.5)
        perm = rng.permutation(8)
        mask = np.ones(3, bool)
        assert sparsity_metric(q, cf, mask) == pytest.approx(
            sparsity_metric(q[perm], cf[perm], mask))


class TestSmoothness:
    def test_time_constant(self):
        r = np.tile(np.array([1.0, -2.0]), (3, 4, 1))
        assert smoothness_metric(r) == 0.0

    def test_hand_value(self):
        r = np.array([[[0.0, 0.0], [3.0, 4.0]]])
        assert smoothness_metric(r) == pytest.approx(1.25)

    def test_needs_two_steps(self):
        with pytest.raises(ValueError):
            smoothness_metric(np.zeros((1, 1, 2)))

    def test_permutation_invariant(self):
        rng = np.random.default_rng(4)
        r = rng.standard_normal((6, 4, 3))
        perm = rng.permutation(6)
        assert smoothness_metric(r) == pytest.approx(smoothness_metric(r[perm]))


class TestSaliencyRoc:
    def test_perfect_ranking(self):
        masks = np.random.default_rng(5).random((4, 3, 3)) > 0.5
        if not masks.any() or masks.all():
            masks[0, 0, 0] = True
            masks[0, 0, 1] = False
        scores = masks.astype(np.float64)
        _, auc = saliency_roc(scores, masks)
        assert auc == pytest.approx(1.0)

    def test_inverted_ranking(self):
        masks = np.zeros((1, 2, 4), dtype=bool)
        masks[0, 0, :2] = True
        scores = 1.0 - masks.astype(np.float64)
        _, auc = saliency_roc(scores, masks)
        assert auc == pytest.approx(0.0)

    def test_random_scores_near_half(self):
        rng = np.random.default_rng(6)
        masks = rng.random((50, 5, 8)) > 0.5
        scores = rng.random((50, 5, 8))
        _, auc = saliency_roc(scores, masks)
        assert abs(auc - 0.5) < 0.05

    def test_degenerate_masks_rejected(self):
        scores = np.ones((1, 2, 2))
        with pytest.raises(ValueError, match="all-true"):
            saliency_roc(scores, np.ones((1, 2, 2), bool))
        with pytest.raises(ValueError, match="all-false"):
            saliency_roc(scores, np.zeros((1, 2, 2), bool))

    def test_matches_mann_whitney_oracle(self):
        rng = np.random.default_rng(7)
        for trial in range(50):
            n_cells = int(rng.integers(10, 200))
            # quantized scores force ties; mixed signs exercise the abs
            scores = rng.integers(-4, 5, n_cells).astype(np.float64) / 4.0
            masks = rng.random(n_cells) > rng.uniform(0.2, 0.8)
            if not masks.any() or masks.all():
                masks[0] = ~masks[0]
            points, auc = saliency_roc(scores.reshape(1, 1, -1), masks.reshape(1, 1, -1))
            expected = mann_whitney_auc(np.abs(scores), masks)
            assert auc == pytest.approx(expected, abs=1e-9), f"trial {trial}"
            assert points.shape[1] == 3

    def test_curve_endpoints(self):
        rng = np.random.default_rng(8)
        scores = rng.random((2, 3, 4))
        masks = rng.random((2, 3, 4)) > 0.5
        points, _ = saliency_roc(scores, masks)
        assert points[-1, 1] == pytest.approx(1.0)
        assert points[-1, 2] == pytest.approx(1.0)
        assert np.all(np.diff(points[:, 0]) < 0)  # thresholds strictly descending


class TestEmbed2d:
    def test_shape_contract(self):
        rng = np.random.default_rng(9)
        points = embed_2d(rng.standard_normal((100, 4, 5)), seed=0)
        assert points.shape == (100, 2)
        assert np.all(np.isfinite(points))

    def test_deterministic_for_fixed_seed(self):
        rng = np.random.default_rng(10)
        data = rng.standard_normal((30, 10))
        a = embed_2d(data, seed=3)
        b = embed_2d(data, seed=3)
        assert np.array_equal(a, b)

    def test_two_clusters_stay_separable(self):
        from sklearn.cluster import KMeans

        rng = np.random.default_rng(11)
        cluster_a = rng.standard_normal((30, 12)) + 10.0
        cluster_b = rng.standard_normal((30, 12)) - 10.0
        data = np.vstack([cluster_a, cluster_b])
        truth = np.array([0] * 30 + [1] * 30)
        points = embed_2d(data, seed=0)
        fitted = KMeans(n_clusters=2, n_init=10, random_state=0).fit_predict(points)
        agreement = max((fitted == truth).mean(), (fitted != truth).mean())
        assert agreement >= 0.9

    def test_identical_points_rejected(self):
        with pytest.raises(ValueError, match="identical"):
            embed_2d(np.ones((10, 4)))

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError, match="at least 5"):
            embed_2d(np.random.default_rng(0).standard_normal((4, 3)))


class TestMetricsReport:
    def make(self, **overrides):
        fields = dict(precision=0.1, similarity=0.2, sparsity=0.3, smoothness=0.05,
                      saliency_auc=0.9, n_samples=10, T=5, F=4, F_mutable=4,
                      approach="sparce", target_class=1, seed=0)
        fields.update(overrides)
        return MetricsReport(**fields)

    def test_json_round_trip(self, tmp_path):
        original = self.make()
        original.save(tmp_path / "metrics.json")
        loaded = MetricsReport.load(tmp_path / "metrics.json")
        assert loaded == original

    def test_optional_auc(self, tmp_path):
        original = self.make(saliency_auc=None)
        original.save(tmp_path / "metrics.json")
        assert MetricsReport.load(tmp_path / "metrics.json").saliency_auc is None

    def test_range_validation(self):
        with pytest.raises(ValueError):
            self.make(sparsity=1.5)
        with pytest.raises(ValueError):
            self.make(precision=-0.1)
        with pytest.raises(ValueError):
            self.make(saliency_auc=1.2)
