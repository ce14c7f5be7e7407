"""Shared fixtures: seeded Gaussian blobs and a saved train / test_id / ood dataset."""

import pytest

from engine.store.embedding_store import blob_centers, save_manifest, synth_blobs, synth_shifted_blobs

CLUSTERS = 3
DIMENSION = 16
SCALE = 10.0
SIGMA = 1.0
SEED = 11


@pytest.fixture(autouse=True)
def _clean_environment(monkeypatch):
    for variable in ("CLUSTER_OOD_THREADS", "CLUSTER_OOD_OUTPUT_DIR", "CLUSTER_OOD_SEED"):
        monkeypatch.delenv(variable, raising=False)


@pytest.fixture
def blobs():
    """Three well separated labelled blobs, 40 samples each, D=6."""
    return synth_blobs(3, 40, 6, 10.0, 1.0, seed=5)


@pytest.fixture(scope="session")
def trio():
    """ID train / test blobs plus far (10 sigma) and near (2 sigma) OOD blobs."""
    centers = blob_centers(CLUSTERS, DIMENSION, SCALE, SEED)
    return {
        "train": synth_blobs(CLUSTERS, 150, DIMENSION, SCALE, SIGMA, SEED, split="train", draw=0),
        "test_id": synth_blobs(CLUSTERS, 50, DIMENSION, SCALE, SIGMA, SEED, split="test_id", draw=1),
        "ood": synth_shifted_blobs(centers, 10.0, 50, SIGMA, SEED, draw=0, name="ood"),
        "ood_near": synth_shifted_blobs(centers, 2.0, 50, SIGMA, SEED, draw=1, name="ood_near"),
    }


@pytest.fixture
def dataset_manifest(tmp_path, trio):
    return save_manifest(trio, tmp_path / "data")
