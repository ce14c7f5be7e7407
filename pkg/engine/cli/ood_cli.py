#!/usr/bin/env python3
"""
Cluster OOD Engine - Command Line

Subcommands:
  synth    synthesize a train / test_id / ood (+ ood_near) blob dataset
  fit      fit a scoring model on the train split
  quality  per-cluster Global Separation, purity and radius; per-K and per-epoch tables
  score    score one split against a fitted model
  eval     score test_id and every OOD split, write AUROC and ROC points
  sweep    AUROC over a grid of cluster source x metric x K x threshold mode

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

Usage:
    python -m engine.cli.ood_cli synth --clusters 5 --per-cluster 200 --dim 64 --scale 10 --sigma 1 --seed 7 --out data/
    python -m engine.cli.ood_cli sweep --manifest data/manifest.txt --out runs/sweep
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from engine.clustering.assignment import ClusterSource
from engine.emit.emit_steps import ReportEmitter
from engine.errors import DataError, OodError, UsageError
from engine.evaluation.roc import auroc_from_arrays, roc_curve_from_arrays
from engine.evaluation.sweep import SweepConfig, build_clusters, default_grid, parse_grid, run_sweep
from engine.gates.gate_runner import GateRunner
from engine.geometry.distances import DistanceMetric
from engine.quality.cluster_quality import (
    ByKRow,
    SeparationConfig,
    quality_report,
    separation_by_k,
    separation_evolution,
    summarize,
)
from engine.scoring.cluster_scoring import ThresholdMode, fit, score_many
from engine.scoring.model_io import load_cluster_model, save_cluster_model
from engine.store.embedding_store import (
    CheckpointSeries,
    EmbeddingSet,
    blob_centers,
    load_checkpoints,
    load_manifest,
    prepare,
    save_manifest,
    synth_blobs,
    synth_shifted_blobs,
)
from utils.run_config_loader import RunConfig, load_run_config

logger = logging.getLogger(__name__)

MODEL_DIR = "model"


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors raised as UsageError (exit code 1)."""

    def error(self, message: str):
        raise UsageError(message, "cli")


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (default: config/default_run.yaml)")
    common.add_argument("--seed", type=int, help="Seed for every random draw")
    common.add_argument("--threads", type=int, help="Worker threads (default: machine parallelism)")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--out", dest="output_dir", help="Output directory")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = _Parser(prog="cluster-ood", description="Cluster-based out-of-distribution detection over embeddings")
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", parents=[common], help="Synthesize a blob dataset")
    synth.add_argument("--clusters", type=int, required=True)
    synth.add_argument("--per-cluster", type=int, required=True)
    synth.add_argument("--dim", type=int, required=True)
    synth.add_argument("--scale", type=float, required=True, help="Radius s of the sphere holding the centers")
    synth.add_argument("--sigma", type=float, required=True)
    synth.add_argument("--test-per-cluster", type=int, help="test_id samples per blob (default: --per-cluster)")
    synth.add_argument("--ood-per-cluster", type=int, help="OOD samples per blob (default: --per-cluster)")
    synth.add_argument("--ood-offset", type=float, default=10.0, help="Far-OOD center shift in units of sigma")
    synth.add_argument("--near-offset", type=float, default=2.0, help="Near-OOD center shift in units of sigma; <= 0 skips ood_near")

    manifest_flags = argparse.ArgumentParser(add_help=False)
    manifest_flags.add_argument("--manifest", help="Dataset manifest")
    manifest_flags.add_argument("--normalize-for-cosine", dest="normalize_for_cosine", action=argparse.BooleanOptionalAction, default=None)
    manifest_flags.add_argument("--normalize-for-distance", dest="normalize_for_distance", action=argparse.BooleanOptionalAction, default=None)

    fit_cmd = commands.add_parser("fit", parents=[common, manifest_flags], help="Fit a scoring model on train")
    fit_cmd.add_argument("--source", default="kmeans", help="gt, single, kmeans or gmm")
    fit_cmd.add_argument("--metric", default="cosine", help="cosine, euclidean or mahalanobis")
    fit_cmd.add_argument("--k", type=int, help="Clusters for kmeans / gmm")

    quality = commands.add_parser("quality", parents=[common, manifest_flags], help="Cluster quality reports")
    quality.add_argument("--split", default="train")
    quality.add_argument("--source", default="gt", help="gt, single, kmeans or gmm")
    quality.add_argument("--k", type=int, help="Clusters for kmeans / gmm")
    quality.add_argument("--x-fraction", dest="x_fraction", type=float)
    quality.add_argument("--separation-metric", dest="separation_metric")
    quality.add_argument("--radius-quantile", dest="radius_quantile", type=float)
    quality.add_argument("--radius-metric", dest="radius_metric")
    quality.add_argument("--by-k", action="store_true", help="Also emit the per-K comparison table")
    quality.add_argument("--k-values", dest="k_values", type=int, nargs="+")
    quality.add_argument("--checkpoints", help="Checkpoint manifest for the per-epoch table")

    score = commands.add_parser("score", parents=[common, manifest_flags], help="Score a split against a model")
    score.add_argument("--model", required=True, help="Model directory written by fit")
    score.add_argument("--split", default="test_id")
    score.add_argument("--mode", default="cluster", help="cluster, global or gmm_default")

    evaluate = commands.add_parser("eval", parents=[common, manifest_flags], help="AUROC of a model on test_id vs OOD")
    evaluate.add_argument("--model", required=True, help="Model directory written by fit")
    evaluate.add_argument("--mode", default="cluster", help="cluster, global or gmm_default")

    sweep = commands.add_parser("sweep", parents=[common, manifest_flags], help="AUROC over a grid")
    sweep.add_argument("--grid", action="append", help="Cell source:metric:K:mode (repeatable); default grid when absent")
    sweep.add_argument("--k-values", dest="k_values", type=int, nargs="+")

    return parser


def _load_config(args: argparse.Namespace, fields: Sequence[str]) -> RunConfig:
    overrides = {"seed": args.seed, "threads": args.threads, "output_dir": args.output_dir}
    overrides.update({name: getattr(args, name, None) for name in fields})
    return load_run_config(args.config, overrides)


def _sweep_config(config: RunConfig) -> SweepConfig:
    return SweepConfig(
        seed=config.seed,
        kmeans_max_iter=config.kmeans_max_iter,
        gmm_max_iter=config.gmm_max_iter,
        tol=config.tol,
        n_init=config.n_init,
        normalize_for_cosine=config.normalize_for_cosine,
        normalize_for_distance=config.normalize_for_distance,
        threads=config.threads,
    )


def _load_sets(config: RunConfig) -> Dict[str, EmbeddingSet]:
    if not config.manifest:
        raise UsageError("no dataset: pass --manifest or set manifest in the config", "cli")
    return load_manifest(config.manifest)


def _split(sets: Dict[str, EmbeddingSet], name: str) -> EmbeddingSet:
    if name not in sets:
        raise UsageError(f"split '{name}' not in manifest (have {', '.join(sets)})", "cli")
    return sets[name]


def cmd_synth(args: argparse.Namespace) -> int:
    config = _load_config(args, [])
    out = Path(config.output_dir)
    seed = config.seed
    test_per_cluster = args.test_per_cluster or args.per_cluster
    ood_per_cluster = args.ood_per_cluster or args.per_cluster

    train = synth_blobs(args.clusters, args.per_cluster, args.dim, args.scale, args.sigma, seed, split="train", draw=0)
    test_id = synth_blobs(args.clusters, test_per_cluster, args.dim, args.scale, args.sigma, seed, split="test_id", draw=1)
    centers = blob_centers(args.clusters, args.dim, args.scale, seed)
    sets = {
        "train": train,
        "test_id": test_id,
        "ood": synth_shifted_blobs(centers, args.ood_offset, ood_per_cluster, args.sigma, seed, draw=0, name="ood"),
    }
    if args.near_offset > 0:
        sets["ood_near"] = synth_shifted_blobs(centers, args.near_offset, ood_per_cluster, args.sigma, seed, draw=1, name="ood_near")

    manifest = save_manifest(sets, out)
    ratio = "inf" if args.sigma == 0 else repr(args.scale / args.sigma)
    print(f"[OK] Synthesized N={train.size} D={train.dimension} J={args.clusters} s/sigma={ratio}")

    emitter = ReportEmitter(out, "synth")
    emitter.emit_config({
        "command": "synth",
        "seed": seed,
        "clusters": args.clusters,
        "per_cluster": args.per_cluster,
        "test_per_cluster": test_per_cluster,
        "ood_per_cluster": ood_per_cluster,
        "dim": args.dim,
        "scale": args.scale,
        "sigma": args.sigma,
        "ood_offset": args.ood_offset,
        "near_offset": args.near_offset,
    })
    data_files = sorted(p for p in out.iterdir() if p.suffix in (".f32", ".labels"))
    emitter.emit_manifest([manifest] + data_files)
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    config = _load_config(args, ["manifest", "normalize_for_cosine", "normalize_for_distance"])
    source = ClusterSource.parse(args.source)
    metric = DistanceMetric.parse(args.metric)
    sets = _load_sets(config)
    train = _split(sets, "train")

    k = args.k
    if source in (ClusterSource.KMEANS, ClusterSource.GMM) and k is None:
        raise UsageError(f"--k is required for source {source.value}", "cli")
    runner = GateRunner(sets)
    runner.require([
        ("labels", lambda: runner.validate_labels("train", needed=source is ClusterSource.GROUND_TRUTH)),
        ("cluster sizes", lambda: runner.validate_cluster_sizes("train", [k] if k else [], metric is DistanceMetric.MAHALANOBIS)),
    ])

    sweep_config = _sweep_config(config)
    normalize = sweep_config.normalize_for(metric)
    representation = prepare(train, normalize)
    clusters, gmm = build_clusters(representation, source, k, sweep_config)
    model = fit(representation, clusters, metric, gmm=gmm, normalized=normalize)

    out = Path(config.output_dir)
    model_manifest = save_cluster_model(model, out / MODEL_DIR)
    print(f"[OK] Fitted {source.value}/{metric.value} model: K={model.num_clusters}, D={model.dimension}")

    emitter = ReportEmitter(out, "fit")
    snapshot = config.snapshot()
    snapshot.update({"command": "fit", "source": source.value, "metric": metric.value, "k": k})
    emitter.emit_config(snapshot)
    emitter.emit_manifest(sorted((out / MODEL_DIR).iterdir()) + [model_manifest])
    return 0


def _model_and_sets(args: argparse.Namespace, config: RunConfig):
    """Load the model and dataset; samples are prepared the way the model's train split was."""
    model = load_cluster_model(args.model)
    if model.metric is DistanceMetric.COSINE:
        flag, option = args.normalize_for_cosine, "normalize-for-cosine"
    else:
        flag, option = args.normalize_for_distance, "normalize-for-distance"
    if flag is not None and flag != model.normalized:
        stored = "L2-normalized" if model.normalized else "raw"
        raise UsageError(f"--{'' if flag else 'no-'}{option} contradicts the model, which was fitted on {stored} embeddings", "cli")
    return model, _load_sets(config), model.normalized


def cmd_score(args: argparse.Namespace) -> int:
    config = _load_config(args, ["manifest", "normalize_for_cosine", "normalize_for_distance"])
    model, sets, normalize = _model_and_sets(args, config)
    mode = ThresholdMode.parse(args.mode)
    samples = prepare(_split(sets, args.split), normalize)

    assigned, raw, values = score_many(model, samples, mode)
    emitter = ReportEmitter(Path(config.output_dir), "score")
    snapshot = config.snapshot()
    snapshot.update({"command": "score", "model": str(args.model), "split": args.split, "mode": mode.value, "normalized": normalize})
    emitter.emit_config(snapshot)
    emitter.emit_scores(f"scores_{args.split}.csv", assigned, raw, values)
    emitter.emit_manifest()
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = _load_config(args, ["manifest", "normalize_for_cosine", "normalize_for_distance"])
    model, sets, normalize = _model_and_sets(args, config)
    mode = ThresholdMode.parse(args.mode)

    runner = GateRunner(sets)
    runner.require([
        ("splits", lambda: runner.validate_splits(["test_id"], need_ood=True)),
        ("dimensions", runner.validate_dimensions),
    ])

    emitter = ReportEmitter(Path(config.output_dir), "eval")
    snapshot = config.snapshot()
    snapshot.update({"command": "eval", "model": str(args.model), "mode": mode.value, "normalized": normalize})
    emitter.emit_config(snapshot)

    assigned, raw, id_values = score_many(model, prepare(sets["test_id"], normalize), mode)
    emitter.emit_scores("scores_test_id.csv", assigned, raw, id_values)

    rows = []
    for name in runner.ood_names():
        assigned, raw, ood_values = score_many(model, prepare(sets[name], normalize), mode)
        emitter.emit_scores(f"scores_{name}.csv", assigned, raw, ood_values)
        scores = np.concatenate([id_values, ood_values])
        is_id = np.concatenate([np.ones(id_values.size, dtype=bool), np.zeros(ood_values.size, dtype=bool)])
        value = auroc_from_arrays(scores, is_id)
        emitter.emit_roc(name, roc_curve_from_arrays(scores, is_id))
        rows.append((name, mode.value, value, id_values.size, ood_values.size))
        print(f"[OK] AUROC {name}: {value:.4f}")

    emitter.emit_eval(rows)
    emitter.emit_manifest()
    return 0


def _quality_clusters(representation: EmbeddingSet, source: ClusterSource, k: Optional[int], config: RunConfig):
    if source in (ClusterSource.KMEANS, ClusterSource.GMM) and k is None:
        raise UsageError(f"--k is required for source {source.value}", "cli")
    clusters, _ = build_clusters(representation, source, k, _sweep_config(config))
    return clusters


def cmd_quality(args: argparse.Namespace) -> int:
    config = _load_config(args, [
        "manifest", "checkpoints", "x_fraction", "separation_metric", "radius_quantile", "radius_metric",
        "k_values", "normalize_for_cosine", "normalize_for_distance",
    ])
    if not config.manifest and not config.checkpoints:
        raise UsageError("quality needs --manifest, --checkpoints, or both", "cli")

    separation = SeparationConfig(fraction_x=config.x_fraction, metric=DistanceMetric.parse(config.separation_metric))
    radius_metric = DistanceMetric.parse(config.radius_metric)
    normalize = _sweep_config(config).normalize_for(separation.metric)
    radius_normalize = _sweep_config(config).normalize_for(radius_metric)
    emitter = ReportEmitter(Path(config.output_dir), "quality")
    snapshot = config.snapshot()
    snapshot.update({"command": "quality", "split": args.split, "source": args.source, "k": args.k, "by_k": args.by_k})
    emitter.emit_config(snapshot)

    if config.manifest:
        sets = load_manifest(config.manifest)
        source = ClusterSource.parse(args.source)
        runner = GateRunner(sets)
        runner.require([
            ("splits", lambda: runner.validate_splits([args.split])),
            ("labels", lambda: runner.validate_labels(args.split, needed=source is ClusterSource.GROUND_TRUTH)),
        ])
        representation = prepare(sets[args.split], normalize)
        clusters = _quality_clusters(representation, source, args.k, config)
        report = quality_report(
            representation,
            clusters,
            separation,
            labels=representation.labels,
            radius_metric=radius_metric,
            quantile=config.radius_quantile,
            threads=config.threads,
            radius_set=prepare(sets[args.split], radius_normalize),
        )
        emitter.emit_quality(report)

        summaries = []
        if report.per_cluster_gs is not None:
            summaries.append((f"{source.value}:global_separation", summarize(report.per_cluster_gs)))
        if report.per_cluster_purity is not None:
            summaries.append((f"{source.value}:purity", summarize(report.per_cluster_purity)))
        summaries.append((f"{source.value}:radius", summarize(report.per_cluster_radius)))

        if args.by_k:
            rows = separation_by_k(representation, config.k_values, config.seed, separation, config.threads)
            emitter.emit_by_k(rows)
            groups: Dict[str, List[ByKRow]] = {}
            for row in rows:
                if row.error:
                    print(f"  [!] by-K {row.source} k={row.k} skipped: {row.error}")
                    continue
                groups.setdefault(f"{row.source}:{row.k}", []).append(row)
            for name, members in groups.items():
                summaries.append((f"{name}:global_separation", summarize([r.global_separation for r in members])))
                if all(r.purity is not None for r in members):
                    summaries.append((f"{name}:purity", summarize([r.purity for r in members])))
        emitter.emit_summary(summaries)

    if config.checkpoints:
        series = load_checkpoints(config.checkpoints)
        series = CheckpointSeries(tuple((epoch, prepare(s, normalize)) for epoch, s in series.entries))
        emitter.emit_evolution(separation_evolution(series, separation, config.threads))

    emitter.emit_manifest()
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _load_config(args, ["manifest", "grid", "k_values", "normalize_for_cosine", "normalize_for_distance"])
    sets = _load_sets(config)
    runner = GateRunner(sets)
    runner.require([
        ("splits", lambda: runner.validate_splits(["train", "test_id"], need_ood=True)),
        ("dimensions", runner.validate_dimensions),
    ])
    train = sets["train"]

    if config.grid:
        grid = parse_grid(config.grid)
    else:
        gt_clusters = int(np.unique(train.labels).size) if train.has_labels else None
        grid = default_grid(train.has_labels, config.k_values, gt_clusters)

    needs_labels = any(cell.cluster_source is ClusterSource.GROUND_TRUTH for cell in grid)
    runner.require([("labels", lambda: runner.validate_labels("train", needed=needs_labels))])

    ood_sets = {name: sets[name] for name in runner.ood_names()}
    report = run_sweep(train, sets["test_id"], ood_sets, grid, _sweep_config(config))

    emitter = ReportEmitter(Path(config.output_dir), "sweep")
    snapshot = config.snapshot()
    snapshot.update({"command": "sweep", "grid": [str(cell) for cell in grid]})
    emitter.emit_config(snapshot)
    emitter.emit_sweep(report)
    emitter.emit_manifest()

    errors = len(report.error_rows)
    print(f"[{'SUCCESS' if not errors else 'OK'}] {len(report.rows)} rows, {errors} error cells")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "quality": cmd_quality,
    "score": cmd_score,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point. Returns the process exit code."""
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except OodError as e:
        print(f"[FAIL] {e}")
        logger.debug("command failed", exc_info=True)
        return e.exit_code
    except OSError as e:
        error = DataError(f"{e.filename or 'filesystem'}: {e.strerror or e}", "cli")
        print(f"[FAIL] {error}")
        logger.debug("command failed", exc_info=True)
        return error.exit_code


if __name__ == "__main__":
    sys.exit(main())
