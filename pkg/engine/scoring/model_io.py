"""
Save / load a fitted ClusterModel: means, reference lists, optional
per-cluster Gaussian factors and optional mixture.
"""

from pathlib import Path
from typing import Union

import numpy as np

from engine.clustering.assignment import ClusterSource
from engine.clustering.model_io import MODEL_MANIFEST, gmm_entries, read_gaussians, read_gmm, write_gaussians
from engine.errors import DataError
from engine.geometry.distances import DistanceMetric
from engine.scoring.cluster_scoring import ClusterModel
from engine.store.binary_format import make_directory, parse_key_value, read_array, write_array, write_key_value

PathLike = Union[str, Path]


def save_cluster_model(model: ClusterModel, directory: PathLike) -> Path:
    directory = make_directory(directory)

    write_array(directory / "means.f64", model.means, "f64")
    write_array(directory / "references.f64", np.concatenate(model.references), "f64")
    entries = [
        ("kind", "cluster_model"),
        ("metric", model.metric.value),
        ("source", model.source.value),
        ("k", str(model.num_clusters)),
        ("dimension", str(model.dimension)),
        ("normalized", "true" if model.normalized else "false"),
        ("means", "means.f64"),
        ("references", "references.f64"),
        ("reference_counts", ",".join(str(r.shape[0]) for r in model.references)),
    ]
    if model.gaussians is not None:
        entries += write_gaussians(directory, "cluster.", model.gaussians)
    if model.gmm is not None:
        entries += gmm_entries(directory, model.gmm)
        write_array(directory / "gmm_reference.f64", model.gmm_reference, "f64")
        entries.append(("gmm_reference", "gmm_reference.f64"))

    manifest = directory / MODEL_MANIFEST
    write_key_value(manifest, entries)
    return manifest


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def load_cluster_model(directory: PathLike) -> ClusterModel:
    directory = Path(directory)
    entries = parse_key_value(directory / MODEL_MANIFEST)
    if entries.get("kind") != "cluster_model":
        raise DataError(f"{directory}: not a scoring model (kind={entries.get('kind')})", "scoring")

    try:
        dimension = int(entries["dimension"])
    except (KeyError, ValueError):
        raise DataError(f"{directory}: model dimension missing or not an integer", "scoring")
    normalized = entries.get("normalized")
    if normalized not in ("true", "false"):
        raise DataError(f"{directory}: 'normalized' must be true or false, got {normalized!r}", "scoring")
    means = read_array(directory / entries["means"], "f64", dimension)
    pooled = read_array(directory / entries["references"], "f64")
    counts = [int(v) for v in entries["reference_counts"].split(",")]
    if sum(counts) != pooled.shape[0] or len(counts) != means.shape[0]:
        raise DataError(f"{directory}: reference counts do not match stored references", "scoring")

    bounds = np.cumsum(counts)[:-1]
    references = tuple(_frozen(part.copy()) for part in np.split(pooled, bounds))
    gaussians = read_gaussians(directory, "cluster.", entries) if "cluster.gaussians" in entries else None
    gmm = read_gmm(directory, entries) if "gmm.gaussians" in entries else None
    gmm_reference = _frozen(read_array(directory / entries["gmm_reference"], "f64")) if gmm is not None else None

    return ClusterModel(
        metric=DistanceMetric.parse(entries["metric"]),
        source=ClusterSource.parse(entries["source"]),
        means=_frozen(means),
        references=references,
        global_reference=_frozen(np.sort(pooled)),
        gaussians=gaussians,
        gmm=gmm,
        gmm_reference=gmm_reference,
        normalized=normalized == "true",
    )
