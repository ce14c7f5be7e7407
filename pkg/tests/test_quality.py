"""Global Separation, purity, radius and the per-epoch / per-K tables."""

import numpy as np
import pytest

from engine.clustering.assignment import ClusterAssignment, from_labels, single_cluster
from engine.errors import DataError, UsageError
from engine.quality.cluster_quality import (
    SeparationConfig,
    SmallestSelector,
    cluster_purity,
    cluster_radius,
    global_separation,
    nearest_rank,
    quality_report,
    separation_by_k,
    separation_evolution,
    separation_terms,
    summarize,
)
from engine.store.embedding_store import CheckpointSeries, EmbeddingSet, l2_normalize, synth_blobs

EUCLIDEAN_ALL_PAIRS = SeparationConfig(fraction_x=1.0, metric="euclidean")


def _two_clusters(a, b) -> tuple:
    data = EmbeddingSet(data=np.array(list(a) + list(b), dtype=float).reshape(-1, 1))
    clusters = ClusterAssignment(num_clusters=2, assignment=[0] * len(a) + [1] * len(b), source="gt")
    return data, clusters


class TestGlobalSeparation:
    def test_far_apart_pairs(self):
        data, clusters = _two_clusters([0.0, 0.1], [10.0, 10.1])
        intra, inter = separation_terms(data, clusters, EUCLIDEAN_ALL_PAIRS)
        assert intra[0] == pytest.approx(0.1)
        assert inter[0, 1] == pytest.approx(10.0)
        assert global_separation(data, clusters, EUCLIDEAN_ALL_PAIRS)[0] == pytest.approx(0.99)

    def test_negative_when_cluster_is_looser_than_its_neighbour_gap(self):
        data, clusters = _two_clusters([0.0, 10.0], [5.0, 5.1])
        assert global_separation(data, clusters, EUCLIDEAN_ALL_PAIRS)[0] == pytest.approx(-0.5)

    def test_truncation_keeps_smallest_pairs(self):
        data, clusters = _two_clusters([0.0, 1.0, 3.0], [100.0, 101.0])
        # three intra pairs (1, 2, 3); ceil(0.5 * 3) = 2 smallest -> mean 1.5
        intra, _ = separation_terms(data, clusters, SeparationConfig(fraction_x=0.5, metric="euclidean"))
        assert intra[0] == pytest.approx(1.5)

    def test_values_bounded(self, blobs):
        values = global_separation(blobs, from_labels(blobs), SeparationConfig())
        assert np.all(values <= 1.0) and np.all(values >= -1.0)
        assert np.all(values > 0.5)

    def test_bounded_over_random_clusterings(self):
        rng = np.random.default_rng(21)
        for trial in range(300):
            k = int(rng.integers(2, 6))
            labels = np.concatenate([np.repeat(np.arange(k), 2), rng.integers(0, k, 30)])
            rng.shuffle(labels)
            data = EmbeddingSet(data=rng.standard_normal((labels.size, 3)) * rng.uniform(0.1, 10.0))
            clusters = ClusterAssignment(num_clusters=k, assignment=labels, source="gt")
            config = SeparationConfig(fraction_x=float(rng.uniform(0.05, 1.0)), metric=("cosine", "euclidean")[trial % 2])
            values = global_separation(data, clusters, config)
            assert np.all(values >= -1.0) and np.all(values <= 1.0)

    def test_single_cluster_rejected(self, blobs):
        with pytest.raises(DataError, match="at least 2 clusters"):
            global_separation(blobs, single_cluster(blobs), SeparationConfig())

    def test_singleton_rejected(self):
        data, clusters = _two_clusters([0.0], [1.0, 2.0])
        with pytest.raises(DataError, match="cluster 0 is a singleton"):
            global_separation(data, clusters, EUCLIDEAN_ALL_PAIRS)

    @pytest.mark.parametrize("fraction", [0.0, 1.5])
    def test_fraction_range(self, fraction):
        with pytest.raises(UsageError):
            SeparationConfig(fraction_x=fraction)

    def test_mahalanobis_rejected(self):
        with pytest.raises(UsageError):
            SeparationConfig(metric="mahalanobis")

    def test_isometry_invariance(self, blobs):
        clusters = from_labels(blobs)
        rotation, _ = np.linalg.qr(np.random.default_rng(4).standard_normal((blobs.dimension, blobs.dimension)))
        moved = blobs.with_data(blobs.data @ rotation.T + 3.0)
        rotated = blobs.with_data(blobs.data @ rotation.T)

        config = SeparationConfig(fraction_x=0.1, metric="euclidean")
        np.testing.assert_allclose(
            global_separation(moved, clusters, config), global_separation(blobs, clusters, config), atol=1e-9
        )
        cosine = SeparationConfig(fraction_x=0.1, metric="cosine")
        np.testing.assert_allclose(
            global_separation(rotated, clusters, cosine), global_separation(blobs, clusters, cosine), atol=1e-9
        )

    def test_thread_count_does_not_change_values(self, blobs):
        clusters = from_labels(blobs)
        config = SeparationConfig()
        np.testing.assert_array_equal(
            global_separation(blobs, clusters, config, threads=1), global_separation(blobs, clusters, config, threads=4)
        )

    def test_smallest_selector_streams(self):
        selector = SmallestSelector(3)
        selector.add(np.array([5.0, 1.0, 9.0]))
        selector.add(np.array([0.5, 7.0]))
        assert selector.mean() == pytest.approx((0.5 + 1.0 + 5.0) / 3)


class TestPurity:
    def test_ground_truth_clusters_are_pure(self, blobs):
        np.testing.assert_array_equal(cluster_purity(from_labels(blobs), blobs.labels), 1.0)

    def test_mixed_cluster(self):
        clusters = ClusterAssignment(num_clusters=2, assignment=[0, 0, 1, 1], source="kmeans")
        np.testing.assert_allclose(cluster_purity(clusters, [1, 1, 1, 2]), [1.0, 0.5])

    def test_needs_labels(self, blobs):
        with pytest.raises(DataError, match="labels"):
            cluster_purity(single_cluster(blobs), None)


class TestRadius:
    def test_nearest_rank(self):
        assert nearest_rank(0.95, 100) == 95
        assert nearest_rank(0.5, 3) == 2
        assert nearest_rank(1.0, 7) == 7

    def test_symmetric_points(self):
        values = np.concatenate([np.arange(1, 51), -np.arange(1, 51)]).astype(float)
        data = EmbeddingSet(data=values.reshape(-1, 1))
        radius = cluster_radius(data, single_cluster(data), "euclidean", 0.95)
        assert radius[0] == pytest.approx(48.0)

    def test_radius_tracks_spread(self):
        rng = np.random.default_rng(12)
        tight = rng.standard_normal((400, 16))
        wide = 40.0 + 2.5 * rng.standard_normal((400, 16))
        data = EmbeddingSet(data=np.vstack([tight, wide]))
        clusters = ClusterAssignment(num_clusters=2, assignment=[0] * 400 + [1] * 400, source="gt")
        radius = cluster_radius(data, clusters, "euclidean")
        assert radius[1] / radius[0] == pytest.approx(2.5, rel=0.1)

    def test_mahalanobis_radius(self, blobs):
        radius = cluster_radius(blobs, from_labels(blobs), "mahalanobis")
        assert np.all(radius > 0.0)

    def test_quantile_range(self, blobs):
        with pytest.raises(UsageError):
            cluster_radius(blobs, from_labels(blobs), "euclidean", 0.0)


class TestReports:
    def test_report_columns(self, blobs):
        report = quality_report(blobs, from_labels(blobs), SeparationConfig(), labels=blobs.labels)
        assert report.sizes == (40, 40, 40)
        assert report.per_cluster_purity == (1.0, 1.0, 1.0)
        assert len(report.per_cluster_gs) == 3
        assert report.radius_quantile == 0.95

    def test_single_cluster_report_has_no_separation(self, blobs):
        report = quality_report(blobs, single_cluster(blobs), SeparationConfig())
        assert report.per_cluster_gs is None
        assert report.per_cluster_purity is None
        assert len(report.per_cluster_radius) == 1

    def test_radius_uses_its_own_representation(self, blobs):
        normalized = l2_normalize(blobs)
        clusters = from_labels(blobs)
        report = quality_report(normalized, clusters, SeparationConfig(), radius_metric="euclidean", radius_set=blobs)
        expected = cluster_radius(blobs, clusters, "euclidean")
        np.testing.assert_allclose(report.per_cluster_radius, expected)
        assert max(cluster_radius(normalized, clusters, "euclidean")) < 2.0 < min(report.per_cluster_radius)

    def test_radius_set_must_match_rows(self, blobs):
        short = EmbeddingSet(data=blobs.data[:10])
        with pytest.raises(DataError, match="radius set has 10 rows"):
            quality_report(blobs, from_labels(blobs), SeparationConfig(), radius_set=short)

    def test_separation_rises_as_blobs_tighten(self):
        early = synth_blobs(3, 30, 4, 10.0, 30.0, seed=2)
        late = synth_blobs(3, 30, 4, 10.0, 0.5, seed=2)
        series = CheckpointSeries(((0, early), (10, late)))
        rows = separation_evolution(series, SeparationConfig(metric="euclidean"))
        by_epoch = {epoch: [r.global_separation for r in rows if r.epoch == epoch] for epoch in (0, 10)}
        assert [r.label for r in rows[:3]] == [0, 1, 2]
        assert all(late_gs > early_gs for early_gs, late_gs in zip(by_epoch[0], by_epoch[10]))

    def test_evolution_error_names_epoch(self):
        unlabelled = EmbeddingSet(data=np.random.default_rng(0).standard_normal((6, 2)))
        series = CheckpointSeries(((3, unlabelled),))
        with pytest.raises(DataError, match="epoch 3"):
            separation_evolution(series, SeparationConfig())

    def test_by_k_rows(self, blobs):
        rows = separation_by_k(blobs, [2, 3], seed=0, config=SeparationConfig())
        assert [(r.source, r.k) for r in rows] == [("gt", 3)] * 3 + [("kmeans", 2)] * 2 + [("kmeans", 3)] * 3
        assert all(r.purity is None for r in rows if r.source == "gt")
        assert all(r.purity == pytest.approx(1.0) for r in rows if r.source == "kmeans" and r.k == 3)

    def test_by_k_keeps_going_past_a_failing_k(self):
        points = synth_blobs(2, 10, 2, 10.0, 1.0, seed=3)
        rows = separation_by_k(points, [2, 20, 25], seed=0, config=SeparationConfig())
        failed = {r.k: r.error for r in rows if r.error}
        assert set(failed) == {20, 25}
        assert "singleton" in failed[20]
        assert "k=25, N=20" in failed[25]
        kept = [r for r in rows if r.source == "kmeans" and r.k == 2]
        assert len(kept) == 2
        assert all(r.error == "" and r.global_separation is not None for r in kept)
        assert [r.cluster for r in rows if r.error] == [None, None]

    def test_summarize(self):
        stats = summarize([1.0, 2.0, 3.0, 4.0, 5.0])
        assert stats == {"min": 1.0, "q1": 2.0, "median": 3.0, "q3": 4.0, "max": 5.0, "mean": 3.0}

    def test_summarize_empty(self):
        with pytest.raises(DataError):
            summarize([])


class TestQualityAcceptance:
    def test_majority_purity(self):
        labels = [4] * 490 + [1] * 10
        clusters = single_cluster(EmbeddingSet(data=np.zeros((500, 1))))
        assert cluster_purity(clusters, labels)[0] == pytest.approx(0.98, abs=1e-15)

    def test_overlapping_blobs_separate_poorly(self):
        overlapping = synth_blobs(3, 100, 8, 0.5, 1.0, seed=13)
        values = global_separation(overlapping, from_labels(overlapping), SeparationConfig(metric="euclidean"))
        assert values.mean() < 0.2
