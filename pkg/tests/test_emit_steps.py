"""Result files, config snapshots, the hashed run manifest and run ids."""

import hashlib

import numpy as np
import pytest

from engine.clustering.assignment import from_labels
from engine.emit.emit_steps import CONFIG_SNAPSHOT, RUN_MANIFEST, ReportEmitter, format_value
from engine.errors import DataError
from engine.evaluation.sweep import SweepReport, SweepRow
from engine.quality.cluster_quality import ByKRow, SeparationConfig, quality_report
from tools.ids import artifact_id, run_id


class TestFormatValue:
    @pytest.mark.parametrize(
        "value, text",
        [(None, ""), (True, "true"), (0.1, "0.1"), (np.float32(0.5), "0.5"), (np.int64(3), "3"), ("gt", "gt")],
    )
    def test_cells(self, value, text):
        assert format_value(value) == text


class TestIds:
    def test_run_id_is_content_derived(self):
        assert run_id("sweep", "abc") == run_id("sweep", "abc")
        assert run_id("sweep", "abc") != run_id("sweep", "abd")
        assert run_id("sweep", "abc").startswith("RUN::SWEEP::")

    def test_artifact_id(self):
        value = artifact_id("RUN::SWEEP::00000000", "sweep.csv", "ff")
        assert value.startswith("ART::sweep.csv::")
        assert len(value.rsplit("::", 1)[1]) == 8


class TestReportEmitter:
    def test_csv_layout(self, tmp_path):
        emitter = ReportEmitter(tmp_path, "eval")
        emitter.write_csv("t.csv", ["a", "b"], [(1, 0.25), (2, None)], comments=["note=1"])
        assert (tmp_path / "t.csv").read_bytes() == b"# note=1\na,b\n1,0.25\n2,\n"

    def test_config_snapshot_sets_run_id(self, tmp_path):
        emitter = ReportEmitter(tmp_path, "sweep")
        emitter.emit_config({"seed": 3, "command": "sweep"})
        text = (tmp_path / CONFIG_SNAPSHOT).read_text()
        assert text == "command: sweep\nseed: 3\n"
        assert emitter.run_id == run_id("sweep", hashlib.sha256(text.encode()).hexdigest())

    def test_quality_file(self, tmp_path, blobs):
        report = quality_report(blobs, from_labels(blobs), SeparationConfig(), labels=blobs.labels)
        ReportEmitter(tmp_path, "quality").emit_quality(report)
        lines = (tmp_path / "quality.csv").read_text().splitlines()
        assert lines[:5] == [
            "# radius_quantile=0.95",
            "# radius_metric=cosine",
            "# separation_metric=cosine",
            "# x_fraction=0.1",
            "cluster,size,global_separation,purity,radius",
        ]
        assert len(lines) == 8
        assert lines[5].startswith("0,40,")

    def test_sweep_error_text_keeps_columns(self, tmp_path):
        row = SweepRow("kmeans", "cosine", "9", "cluster", "ood", None, 10, 10, "k-means needs 1 <= k <= N, got k=9, N=4")
        ReportEmitter(tmp_path, "sweep").emit_sweep(SweepReport(rows=(row,)))
        last = (tmp_path / "sweep.csv").read_text().splitlines()[-1]
        assert last.count(",") == 8
        assert last.endswith("got k=9; N=4")

    def test_by_k_error_rows_keep_columns(self, tmp_path):
        rows = [
            ByKRow("kmeans", 2, 0, 0.5, 1.0),
            ByKRow("kmeans", 9, None, None, None, "clustering: k-means needs 1 <= k <= N, got k=9, N=4"),
        ]
        ReportEmitter(tmp_path, "quality").emit_by_k(rows)
        lines = (tmp_path / "by_k.csv").read_text().splitlines()
        assert lines == [
            "source,k,cluster,global_separation,purity,error",
            "kmeans,2,0,0.5,1.0,",
            "kmeans,9,,,,clustering: k-means needs 1 <= k <= N; got k=9; N=4",
        ]

    def test_output_directory_under_a_file(self, tmp_path):
        blocker = tmp_path / "plain_file"
        blocker.write_text("")
        emitter = ReportEmitter(blocker / "sub", "eval")
        with pytest.raises(DataError, match="cannot create directory") as raised:
            emitter.emit_eval([("ood", "cluster", 0.875, 2, 2)])
        assert raised.value.module == "emit"
        with pytest.raises(DataError, match="cannot create directory"):
            emitter.emit_manifest()

    def test_manifest_hashes_every_file(self, tmp_path):
        emitter = ReportEmitter(tmp_path, "eval")
        emitter.emit_config({"seed": 0})
        emitter.emit_eval([("ood", "cluster", 0.875, 2, 2)])
        extra = tmp_path / "model" / "means.f64"
        extra.parent.mkdir()
        extra.write_bytes(b"\x00" * 8)
        emitter.emit_manifest([extra])

        lines = (tmp_path / RUN_MANIFEST).read_text().splitlines()
        assert lines[0] == f"run_id={emitter.run_id}"
        assert lines[1] == "files=3"
        entries = {line.split(",")[0]: line.split(",") for line in lines[2:]}
        assert list(entries) == [CONFIG_SNAPSHOT, "eval.csv", "model/means.f64"]
        eval_bytes = (tmp_path / "eval.csv").read_bytes()
        assert entries["eval.csv"][1:3] == [str(len(eval_bytes)), hashlib.sha256(eval_bytes).hexdigest()]
        assert entries["model/means.f64"][3] == artifact_id(emitter.run_id, "model/means.f64", hashlib.sha256(b"\x00" * 8).hexdigest())
