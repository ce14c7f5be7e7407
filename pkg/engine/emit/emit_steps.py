#!/usr/bin/env python3
"""
Cluster OOD Engine - Emit Steps (Report Layer)

Writes the result files of a run into its output directory:
  - quality.csv: per-cluster size, Global Separation, purity, radius
  - evolution.csv: Global Separation per checkpoint epoch
  - by_k.csv: Global Separation and purity per K
  - summary.csv: boxplot statistics of the per-cluster values
  - scores.csv: per-sample probability scores
  - roc_<ood_set>.csv: ROC points
  - eval.csv / sweep.csv: AUROC tables
  - config.yaml: snapshot of the effective configuration
  - run_manifest.txt: file inventory with sizes and SHA256 hashes

Output is deterministic: LF line endings, fixed column order, floats via
repr, no timestamps. Re-running a configuration reproduces every byte.
"""

import hashlib
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from engine.errors import DataError
from engine.evaluation.sweep import SweepReport
from engine.quality.cluster_quality import ByKRow, EvolutionRow, QualityReport
from engine.store.binary_format import make_directory
from tools.ids import artifact_id, run_id

logger = logging.getLogger(__name__)

RUN_MANIFEST = "run_manifest.txt"
CONFIG_SNAPSHOT = "config.yaml"


def format_value(value: Any) -> str:
    """CSV cell text: repr for floats, empty for missing values."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


class ReportEmitter:
    """Writes run outputs and records them in a hashed file manifest."""

    def __init__(self, output_dir: Path, command: str):
        """
        Initialize report emitter.

        Args:
            output_dir: Directory to write emitted files
            command: CLI command that produced the run (part of the run id)
        """
        self.output_dir = Path(output_dir)
        self.command = command
        self.run_id = ""
        self.files: Dict[str, Dict[str, Any]] = {}

    def _write_text_file(self, filename: str, content: str) -> Path:
        """
        Write text data to file and update manifest.

        Args:
            filename: Output filename
            content: Text content to write

        Returns:
            Path of the written file
        """
        make_directory(self.output_dir, "emit")
        output_path = self.output_dir / filename
        payload = content.encode("utf-8")
        try:
            with open(output_path, "wb") as f:
                f.write(payload)
        except OSError as e:
            raise DataError(f"failed to write {output_path}: {e}", "emit")

        self.files[filename] = {"sha256": hashlib.sha256(payload).hexdigest(), "size_bytes": len(payload)}
        print(f"[OK] Emitted: {filename} ({len(payload)} bytes)")
        return output_path

    def write_csv(self, filename: str, header: Sequence[str], rows: Sequence[Sequence[Any]], comments: Sequence[str] = ()) -> Path:
        lines = [f"# {comment}" for comment in comments]
        lines.append(",".join(header))
        lines += [",".join(format_value(v) for v in row) for row in rows]
        return self._write_text_file(filename, "\n".join(lines) + "\n")

    def emit_config(self, config: Dict[str, Any]) -> Path:
        """
        Emit config.yaml and derive the run id from its content.

        Args:
            config: Effective configuration (execution-only knobs such as threads excluded)

        Returns:
            Path of the snapshot
        """
        text = yaml.safe_dump(config, sort_keys=True, default_flow_style=False)
        self.run_id = run_id(self.command, hashlib.sha256(text.encode("utf-8")).hexdigest())
        return self._write_text_file(CONFIG_SNAPSHOT, text)

    def emit_quality(self, report: QualityReport) -> Path:
        rows = []
        for c, size in enumerate(report.sizes):
            gs = None if report.per_cluster_gs is None else report.per_cluster_gs[c]
            purity = None if report.per_cluster_purity is None else report.per_cluster_purity[c]
            rows.append((c, size, gs, purity, report.per_cluster_radius[c]))
        comments = [
            f"radius_quantile={format_value(report.radius_quantile)}",
            f"radius_metric={report.radius_metric.value}",
            f"separation_metric={report.separation.metric.value}",
            f"x_fraction={format_value(report.separation.fraction_x)}",
        ]
        return self.write_csv("quality.csv", ["cluster", "size", "global_separation", "purity", "radius"], rows, comments)

    def emit_evolution(self, rows: Sequence[EvolutionRow]) -> Path:
        return self.write_csv(
            "evolution.csv",
            ["epoch", "cluster", "label", "global_separation"],
            [(r.epoch, r.cluster, r.label, r.global_separation) for r in rows],
        )

    def emit_by_k(self, rows: Sequence[ByKRow]) -> Path:
        return self.write_csv(
            "by_k.csv",
            ["source", "k", "cluster", "global_separation", "purity", "error"],
            [(r.source, r.k, r.cluster, r.global_separation, r.purity, r.error.replace(",", ";")) for r in rows],
        )

    def emit_summary(self, summaries: Sequence[Tuple[str, Dict[str, float]]]) -> Path:
        """One boxplot row per named group (e.g. `gt:gs`, `kmeans:10:purity`)."""
        columns = ["min", "q1", "median", "q3", "max", "mean"]
        return self.write_csv(
            "summary.csv",
            ["group"] + columns,
            [[name] + [stats[c] for c in columns] for name, stats in summaries],
        )

    def emit_scores(self, filename: str, assigned: np.ndarray, raw: np.ndarray, values: np.ndarray) -> Path:
        rows = [(i, int(a), float(d), float(v)) for i, (a, d, v) in enumerate(zip(assigned, raw, values))]
        return self.write_csv(filename, ["sample_id", "assigned_cluster", "raw_distance", "value"], rows)

    def emit_roc(self, ood_set: str, points: Sequence[Tuple[float, float]]) -> Path:
        return self.write_csv(f"roc_{ood_set}.csv", ["fpr", "tpr"], points)

    def emit_eval(self, rows: Sequence[Tuple[str, str, float, int, int]]) -> Path:
        return self.write_csv("eval.csv", ["ood_set", "threshold_mode", "auroc", "n_id", "n_ood"], rows)

    def emit_sweep(self, report: SweepReport) -> Path:
        header = ["cluster_source", "metric", "k", "threshold_mode", "ood_set", "auroc", "n_id", "n_ood", "error"]
        rows = [
            (r.cluster_source, r.metric, r.k, r.threshold_mode, r.ood_set, r.auroc, r.n_id, r.n_ood, r.error.replace(",", ";"))
            for r in report.rows
        ]
        return self.write_csv("sweep.csv", header, rows)

    def emit_manifest(self, extra_files: Optional[List[Path]] = None) -> Path:
        """
        Emit run_manifest.txt with file inventory and SHA256 hashes.

        Args:
            extra_files: Files written outside the emitter (data, models), hashed from disk

        Returns:
            Path of the manifest
        """
        entries: Dict[str, Dict[str, Any]] = dict(self.files)
        for path in extra_files or []:
            path = Path(path)
            try:
                payload = path.read_bytes()
            except OSError as e:
                raise DataError(f"cannot hash {path}: {e.strerror or e}", "emit")
            name = path.relative_to(self.output_dir).as_posix() if path.is_relative_to(self.output_dir) else path.as_posix()
            entries[name] = {"sha256": hashlib.sha256(payload).hexdigest(), "size_bytes": len(payload)}

        lines = [f"run_id={self.run_id or run_id(self.command, '')}", f"files={len(entries)}"]
        for name in sorted(entries):
            info = entries[name]
            lines.append(f"{name},{info['size_bytes']},{info['sha256']},{artifact_id(self.run_id, name, info['sha256'])}")

        output_path = make_directory(self.output_dir, "emit") / RUN_MANIFEST
        try:
            output_path.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
        except OSError as e:
            raise DataError(f"failed to write {output_path}: {e.strerror or e}", "emit")
        print(f"[OK] Emitted: {RUN_MANIFEST} ({len(entries)} files)")
        logger.info("run %s: %d files in %s", self.run_id, len(entries), self.output_dir)
        return output_path
