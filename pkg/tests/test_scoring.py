"""Reference-distribution scoring and scoring model files."""

import numpy as np
import pytest
from scipy import stats

from engine.clustering.assignment import ClusterAssignment, from_labels, single_cluster
from engine.clustering.gmm import gmm_fit
from engine.errors import DataError, UsageError
from engine.scoring.cluster_scoring import (
    ThresholdMode,
    fit,
    midrank_cdf,
    midrank_survival,
    score_cluster_threshold,
    score_gmm_global,
    score_global_threshold,
    score_many,
)
from engine.scoring.model_io import load_cluster_model, save_cluster_model
from engine.store.embedding_store import EmbeddingSet, l2_normalize, synth_blobs


def _line(values) -> EmbeddingSet:
    return EmbeddingSet(data=np.asarray(values, dtype=float).reshape(-1, 1))


class TestFit:
    def test_mean_and_reference(self):
        train = _line([0.0, 2.0])
        model = fit(train, single_cluster(train), "euclidean")
        np.testing.assert_allclose(model.means, [[1.0]])
        np.testing.assert_allclose(model.references[0], [1.0, 1.0])
        np.testing.assert_allclose(model.global_reference, [1.0, 1.0])

    def test_references_are_sorted_per_cluster(self, blobs):
        model = fit(blobs, from_labels(blobs), "cosine")
        for reference in model.references:
            assert np.all(np.diff(reference) >= 0.0)
        assert model.global_reference.size == blobs.size

    def test_mahalanobis_singleton(self):
        train = EmbeddingSet(data=[[0.0, 0.0], [1.0, 1.0], [5.0, 5.0]])
        clusters = ClusterAssignment(num_clusters=2, assignment=[0, 0, 1], source="kmeans")
        with pytest.raises(DataError, match="cluster 1 is a singleton"):
            fit(train, clusters, "mahalanobis")

    def test_assignment_size_mismatch(self, blobs):
        with pytest.raises(DataError):
            fit(blobs, single_cluster(_line([0.0, 1.0])), "euclidean")


class TestMidrank:
    @pytest.mark.parametrize("value, expected", [(2.5, 0.5), (2.0, 0.625), (0.0, 1.0), (5.0, 0.0)])
    def test_survival(self, value, expected):
        reference = np.array([1.0, 2.0, 3.0, 4.0])
        assert midrank_survival(reference, np.array([value]))[0] == pytest.approx(expected)

    def test_cdf_complements_survival(self):
        reference = np.array([1.0, 2.0, 2.0, 4.0])
        values = np.array([0.0, 2.0, 3.0, 9.0])
        np.testing.assert_allclose(midrank_cdf(reference, values) + midrank_survival(reference, values), 1.0)


class TestScore:
    def test_values_bounded_and_fields(self, blobs):
        model = fit(blobs, from_labels(blobs), "euclidean")
        score = score_cluster_threshold(model, blobs.data[0] + 0.1)
        assert 0.0 <= score.value <= 1.0
        assert score.assigned_cluster == 0
        assert score.raw_distance >= 0.0

    def test_farther_scores_lower(self):
        train = _line(np.linspace(-1.0, 1.0, 21))
        model = fit(train, single_cluster(train), "euclidean")
        values = [score_global_threshold(model, [x]).value for x in (0.1, 0.5, 0.9, 3.0)]
        assert values == sorted(values, reverse=True)
        assert values[-1] == 0.0

    def test_single_cluster_modes_agree(self, blobs):
        model = fit(blobs, single_cluster(blobs), "euclidean")
        samples = synth_blobs(3, 10, 6, 10.0, 1.0, seed=5, draw=4)
        np.testing.assert_array_equal(score_many(model, samples, "cluster")[2], score_many(model, samples, "global")[2])

    def test_cosine_raw_distance_range(self, blobs):
        normalized = l2_normalize(blobs)
        model = fit(normalized, from_labels(normalized), "cosine")
        _, raw, _ = score_many(model, normalized, ThresholdMode.GLOBAL)
        assert raw.min() >= 0.0 and raw.max() <= 2.0

    def test_in_distribution_scores_are_uniform(self):
        train = synth_blobs(1, 2000, 4, 0.0, 1.0, seed=21)
        test = synth_blobs(1, 2000, 4, 0.0, 1.0, seed=21, draw=1)
        model = fit(train, single_cluster(train), "euclidean")
        _, _, values = score_many(model, test, "cluster")
        assert np.mean(values) == pytest.approx(0.5, abs=0.03)
        assert stats.kstest(values, "uniform").statistic < 0.06

    def test_training_samples_score_uniformly(self):
        train = synth_blobs(3, 400, 8, 10.0, 1.0, seed=31)
        model = fit(train, from_labels(train), "euclidean")
        _, _, values = score_many(model, train, "cluster")
        assert stats.kstest(values, "uniform").statistic < 0.05

    def test_training_reference_only(self, blobs):
        model = fit(blobs, from_labels(blobs), "euclidean")
        before = score_many(model, blobs, "cluster")[2]
        score_many(model, synth_blobs(3, 50, 6, 10.0, 5.0, seed=8, draw=3), "cluster")
        np.testing.assert_array_equal(score_many(model, blobs, "cluster")[2], before)

    def test_dimension_mismatch(self, blobs):
        model = fit(blobs, from_labels(blobs), "euclidean")
        with pytest.raises(DataError, match="dimension mismatch"):
            score_many(model, np.ones((2, 3)), "cluster")

    def test_unknown_mode(self):
        with pytest.raises(UsageError):
            ThresholdMode.parse("local")


class TestMixtureScoring:
    def test_gmm_default_needs_mixture(self, blobs):
        model = fit(blobs, from_labels(blobs), "euclidean")
        with pytest.raises(UsageError, match="gmm_default"):
            score_gmm_global(model, blobs.data[0])

    def test_gmm_default_ranks_likelihood(self, blobs):
        gmm, clusters = gmm_fit(blobs, 3, seed=0)
        model = fit(blobs, clusters, "mahalanobis", gmm=gmm)
        near = score_gmm_global(model, blobs.data[0])
        far = score_gmm_global(model, blobs.data[0] + 50.0)
        assert near.value > 0.0
        assert far.value == 0.0
        assert far.raw_distance < near.raw_distance

    def test_mixture_clusters_assign_by_responsibility(self, blobs):
        gmm, clusters = gmm_fit(blobs, 3, seed=0)
        model = fit(blobs, clusters, "euclidean", gmm=gmm)
        assert model.uses_responsibilities
        assigned, _, _ = score_many(model, blobs, "cluster")
        np.testing.assert_array_equal(assigned, clusters.assignment)

    def test_one_component_reverses_mahalanobis_ranking(self, blobs):
        gmm, clusters = gmm_fit(blobs, 1, seed=0)
        model = fit(blobs, clusters, "mahalanobis", gmm=gmm)
        _, likelihood, gmm_values = score_many(model, blobs, "gmm_default")
        _, distance, global_values = score_many(model, blobs, "global")
        np.testing.assert_array_equal(np.argsort(likelihood), np.argsort(-distance))
        np.testing.assert_allclose(gmm_values, global_values)


class TestModelFiles:
    @pytest.mark.parametrize("metric", ["cosine", "euclidean", "mahalanobis"])
    def test_reloaded_model_scores_identically(self, tmp_path, blobs, metric):
        model = fit(blobs, from_labels(blobs), metric)
        loaded = load_cluster_model(save_cluster_model(model, tmp_path).parent)
        for mode in ("cluster", "global"):
            for expected, actual in zip(score_many(model, blobs, mode), score_many(loaded, blobs, mode)):
                np.testing.assert_array_equal(actual, expected)

    def test_reloaded_mixture_model(self, tmp_path, blobs):
        gmm, clusters = gmm_fit(blobs, 3, seed=1)
        model = fit(blobs, clusters, "euclidean", gmm=gmm)
        loaded = load_cluster_model(save_cluster_model(model, tmp_path).parent)
        assert loaded.uses_responsibilities
        np.testing.assert_array_equal(score_many(loaded, blobs, "gmm_default")[2], score_many(model, blobs, "gmm_default")[2])

    def test_wrong_kind(self, tmp_path):
        (tmp_path / "model.txt").write_text("kind = kmeans\n")
        with pytest.raises(DataError, match="not a scoring model"):
            load_cluster_model(tmp_path)

    def test_normalization_flag_survives_reload(self, tmp_path, blobs):
        normalized = l2_normalize(blobs)
        model = fit(normalized, from_labels(normalized), "euclidean", normalized=True)
        manifest = save_cluster_model(model, tmp_path)
        assert "normalized = true" in manifest.read_text()
        assert load_cluster_model(tmp_path).normalized
        assert not fit(blobs, from_labels(blobs), "euclidean").normalized

    def test_missing_normalization_flag(self, tmp_path, blobs):
        manifest = save_cluster_model(fit(blobs, from_labels(blobs), "euclidean"), tmp_path)
        lines = [line for line in manifest.read_text().splitlines(keepends=True) if not line.startswith("normalized")]
        manifest.write_text("".join(lines))
        with pytest.raises(DataError, match="'normalized' must be true or false"):
            load_cluster_model(tmp_path)


class TestMidrankOracle:
    def test_matches_direct_counting(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            n = int(rng.integers(1, 101))
            reference = np.sort(rng.integers(0, 20, n).astype(float))
            values = rng.integers(-2, 22, 30).astype(float)
            above = (reference[None, :] > values[:, None]).sum(axis=1)
            ties = (reference[None, :] == values[:, None]).sum(axis=1)
            np.testing.assert_array_equal(midrank_survival(reference, values), (above + 0.5 * ties) / n)
