"""
Save / load fitted k-means and mixture models.

A model directory holds `model.txt` (key = value) and f64 array files.
"""

from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from engine.clustering.gmm import GmmModel
from engine.clustering.kmeans import KMeansModel
from engine.errors import DataError
from engine.geometry.gaussian import GaussianStats
from engine.store.binary_format import make_directory, parse_key_value, read_array, write_array, write_key_value

MODEL_MANIFEST = "model.txt"
PathLike = Union[str, Path]


def write_gaussians(directory: Path, prefix: str, gaussians: Sequence[GaussianStats]) -> List[Tuple[str, str]]:
    """Write means, covariances and factors of a list of GaussianStats as f64 blocks."""
    dimension = gaussians[0].dimension
    means = np.vstack([g.mean for g in gaussians])
    covariances = np.vstack([g.covariance for g in gaussians])
    factors = np.vstack([g.factor for g in gaussians])
    write_array(directory / f"{prefix}means.f64", means, "f64")
    write_array(directory / f"{prefix}covariances.f64", covariances, "f64")
    write_array(directory / f"{prefix}factors.f64", factors, "f64")
    return [
        (f"{prefix}gaussians", str(len(gaussians))),
        (f"{prefix}means", f"{prefix}means.f64"),
        (f"{prefix}covariances", f"{prefix}covariances.f64"),
        (f"{prefix}factors", f"{prefix}factors.f64"),
        (f"{prefix}epsilons", ",".join(repr(g.epsilon) for g in gaussians)),
        (f"{prefix}dimension", str(dimension)),
    ]


def read_gaussians(directory: Path, prefix: str, entries: dict) -> Tuple[GaussianStats, ...]:
    count = int(entries[f"{prefix}gaussians"])
    dimension = int(entries[f"{prefix}dimension"])
    means = read_array(directory / entries[f"{prefix}means"], "f64", dimension)
    covariances = read_array(directory / entries[f"{prefix}covariances"], "f64", dimension)
    factors = read_array(directory / entries[f"{prefix}factors"], "f64", dimension)
    epsilons = [float(v) for v in entries[f"{prefix}epsilons"].split(",")]
    if means.shape[0] != count or covariances.shape[0] != count * dimension or len(epsilons) != count:
        raise DataError(f"{directory}: stored Gaussian blocks disagree with count {count}", "clustering")

    gaussians = []
    for c in range(count):
        block = slice(c * dimension, (c + 1) * dimension)
        arrays = [means[c].copy(), covariances[block].copy(), factors[block].copy()]
        for array in arrays:
            array.setflags(write=False)
        gaussians.append(GaussianStats(mean=arrays[0], covariance=arrays[1], factor=arrays[2], epsilon=epsilons[c]))
    return tuple(gaussians)


def gmm_entries(directory: Path, model: GmmModel, prefix: str = "gmm.") -> List[Tuple[str, str]]:
    write_array(directory / f"{prefix}weights.f64", model.weights, "f64")
    entries = write_gaussians(directory, prefix, model.components)
    entries += [
        (f"{prefix}weights", f"{prefix}weights.f64"),
        (f"{prefix}final_log_likelihood", repr(float(model.final_log_likelihood))),
        (f"{prefix}iterations_run", str(model.iterations_run)),
        (f"{prefix}log_likelihood_trace", ",".join(repr(v) for v in model.log_likelihood_trace)),
    ]
    return entries


def read_gmm(directory: Path, entries: dict, prefix: str = "gmm.") -> GmmModel:
    components = read_gaussians(directory, prefix, entries)
    weights = read_array(directory / entries[f"{prefix}weights"], "f64")
    weights.setflags(write=False)
    trace_text = entries.get(f"{prefix}log_likelihood_trace", "")
    return GmmModel(
        components=components,
        weights=weights,
        final_log_likelihood=float(entries[f"{prefix}final_log_likelihood"]),
        iterations_run=int(entries[f"{prefix}iterations_run"]),
        log_likelihood_trace=tuple(float(v) for v in trace_text.split(",") if v),
    )


def save_model(model: Union[KMeansModel, GmmModel], directory: PathLike) -> Path:
    """Write a fitted KMeansModel or GmmModel. Returns the manifest path."""
    directory = make_directory(directory)

    if isinstance(model, KMeansModel):
        write_array(directory / "centroids.f64", model.centroids, "f64")
        entries = [
            ("kind", "kmeans"),
            ("dimension", str(model.dimension)),
            ("k", str(model.num_clusters)),
            ("centroids", "centroids.f64"),
            ("inertia", repr(float(model.inertia))),
            ("iterations_run", str(model.iterations_run)),
        ]
    elif isinstance(model, GmmModel):
        entries = [("kind", "gmm"), ("k", str(model.num_components))] + gmm_entries(directory, model)
    else:
        raise DataError(f"cannot save a {type(model).__name__}", "clustering")

    manifest = directory / MODEL_MANIFEST
    write_key_value(manifest, entries)
    return manifest


def load_model(directory: PathLike) -> Union[KMeansModel, GmmModel]:
    directory = Path(directory)
    entries = parse_key_value(directory / MODEL_MANIFEST)
    kind = entries.get("kind")
    if kind == "kmeans":
        centroids = read_array(directory / entries["centroids"], "f64", int(entries["dimension"]))
        centroids.setflags(write=False)
        return KMeansModel(
            centroids=centroids,
            inertia=float(entries["inertia"]),
            iterations_run=int(entries["iterations_run"]),
        )
    if kind == "gmm":
        return read_gmm(directory, entries)
    raise DataError(f"{directory}: unknown model kind '{kind}'", "clustering")
