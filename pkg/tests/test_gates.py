"""Dataset gates run before a command starts."""

import numpy as np
import pytest

from engine.errors import DataError
from engine.gates.gate_runner import GateRunner, main
from engine.store.embedding_store import EmbeddingSet


def _sets(**overrides):
    sets = {
        "train": EmbeddingSet(data=np.ones((6, 3)), labels=[0, 0, 0, 1, 1, 1]),
        "test_id": EmbeddingSet(data=np.ones((2, 3)), split="test_id", name="test_id"),
        "ood": EmbeddingSet(data=np.ones((2, 3)), split="ood", name="ood"),
    }
    sets.update(overrides)
    return {name: s for name, s in sets.items() if s is not None}


class TestGateRunner:
    def test_complete_dataset_passes(self):
        runner = GateRunner(_sets())
        assert runner.validate_splits(["train", "test_id"], need_ood=True)
        assert runner.validate_dimensions()
        assert runner.errors == []

    def test_missing_split(self):
        runner = GateRunner(_sets(test_id=None))
        assert not runner.validate_splits(["train", "test_id"])
        assert runner.errors == ["splits: missing required split 'test_id'"]

    def test_needs_an_ood_split(self):
        runner = GateRunner(_sets(ood=None))
        assert not runner.validate_splits(["train"], need_ood=True)

    def test_named_ood_splits(self):
        near = EmbeddingSet(data=np.ones((2, 3)), split="ood", name="ood_near")
        assert GateRunner(_sets(ood_near=near)).ood_names() == ["ood", "ood_near"]

    def test_dimension_disagreement(self):
        runner = GateRunner(_sets(ood=EmbeddingSet(data=np.ones((2, 4)), split="ood")))
        assert not runner.validate_dimensions()

    def test_labels_needed(self):
        runner = GateRunner(_sets(train=EmbeddingSet(data=np.ones((6, 3)))))
        assert not runner.validate_labels("train", needed=True)
        assert "no labels" in runner.errors[0]

    def test_unlabelled_split_only_warns(self):
        runner = GateRunner(_sets(train=EmbeddingSet(data=np.ones((6, 3)))))
        assert runner.validate_labels("train", needed=False)
        assert runner.errors == [] and len(runner.warnings) == 1

    def test_cluster_sizes(self):
        runner = GateRunner(_sets())
        assert not runner.validate_cluster_sizes("train", [2, 7])
        assert runner.errors == ["cluster sizes: K=7 exceeds N=6 of 'train'"]

    def test_small_mahalanobis_clusters_warn(self):
        runner = GateRunner(_sets())
        assert runner.validate_cluster_sizes("train", [3], mahalanobis=True)
        assert len(runner.warnings) == 1

    def test_require_raises_with_every_error(self, capsys):
        runner = GateRunner(_sets(test_id=None, ood=None))
        with pytest.raises(DataError, match="test_id.*no OOD split"):
            runner.require([("splits", lambda: runner.validate_splits(["train", "test_id"], need_ood=True))])
        assert "Gate: splits... [FAIL]" in capsys.readouterr().out


class TestGateMain:
    def test_valid_manifest(self, dataset_manifest, capsys):
        assert main([str(dataset_manifest)]) == 0
        assert "[SUCCESS] ALL GATES PASSED" in capsys.readouterr().out

    def test_missing_manifest(self, tmp_path):
        assert main([str(tmp_path / "absent.txt")]) == 2

    def test_no_arguments(self):
        assert main([]) == 1
