"""
Embedding Store

Loads, validates, normalizes and synthesizes embedding datasets.

An EmbeddingSet is an immutable N x D float64 matrix plus optional integer
labels and a split tag. Storage is little-endian f32 with a plain-text
manifest:

    dimension = 2
    dtype = f32
    train.data = train.f32
    train.labels = train.labels
    test_id.data = test_id.f32
    ood.data = ood.f32
    ood_near.data = ood_near.f32

Any `ood_<name>` split is an additional OOD set.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from engine.errors import DataError
from engine.store.binary_format import make_directory, parse_key_value, read_array, write_array, write_key_value

logger = logging.getLogger(__name__)

SPLITS = ("train", "test_id", "ood")
MANIFEST_NAME = "manifest.txt"
# rows already within this distance of unit norm are left untouched
_UNIT_NORM_SLACK = 8 * np.finfo(np.float64).eps

PathLike = Union[str, Path]


def split_tag(split_name: str) -> str:
    """Map a manifest split name to its split tag (ood_<name> -> ood)."""
    if split_name in SPLITS:
        return split_name
    if split_name.startswith("ood_") and len(split_name) > 4:
        return "ood"
    raise DataError(f"unknown split '{split_name}' (expected train, test_id, ood or ood_<name>)", "store")


@dataclass(frozen=True)
class EmbeddingSet:
    """N x D embedding matrix with optional labels. Immutable after construction."""

    data: np.ndarray
    labels: Optional[np.ndarray] = None
    split: str = "train"
    name: str = ""

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim == 1:
            data = data.reshape(-1, 1)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise DataError(f"{self.name or self.split}: expected a non-empty N x D matrix, got shape {data.shape}", "store")

        finite_rows = np.isfinite(data).all(axis=1)
        if not finite_rows.all():
            row = int(np.flatnonzero(~finite_rows)[0])
            raise DataError(f"{self.name or self.split}: non-finite value in row {row}", "store")

        labels = None
        if self.labels is not None:
            raw_labels = np.asarray(self.labels)
            if raw_labels.ndim != 1 or raw_labels.shape[0] != data.shape[0]:
                raise DataError(
                    f"{self.name or self.split}: label length {raw_labels.size} does not match {data.shape[0]} samples",
                    "store",
                )
            if raw_labels.size and not np.all(np.equal(np.mod(raw_labels, 1), 0)):
                raise DataError(f"{self.name or self.split}: labels must be integers", "store")
            labels = raw_labels.astype(np.int64)
            if labels.size and labels.min() < 0:
                row = int(np.flatnonzero(labels < 0)[0])
                raise DataError(f"{self.name or self.split}: negative label in row {row}", "store")
            labels.setflags(write=False)

        if self.split not in SPLITS:
            raise DataError(f"unknown split tag '{self.split}'", "store")

        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "name", self.name or self.split)

    @property
    def size(self) -> int:
        return int(self.data.shape[0])

    @property
    def dimension(self) -> int:
        return int(self.data.shape[1])

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def with_data(self, data: np.ndarray) -> "EmbeddingSet":
        """Copy with replaced values; labels, split and name preserved."""
        return EmbeddingSet(data=data, labels=self.labels, split=self.split, name=self.name)


@dataclass(frozen=True)
class CheckpointSeries:
    """Embedding sets of the same samples at increasing training epochs."""

    entries: Tuple[Tuple[int, EmbeddingSet], ...] = field(default_factory=tuple)

    def __post_init__(self):
        entries = tuple(self.entries)
        if not entries:
            raise DataError("checkpoint series is empty", "store")
        epochs = [epoch for epoch, _ in entries]
        if any(epoch < 0 for epoch in epochs):
            raise DataError("checkpoint epochs must be non-negative", "store")
        if any(later <= earlier for earlier, later in zip(epochs, epochs[1:])):
            raise DataError(f"checkpoint epochs must be strictly increasing, got {epochs}", "store")

        first = entries[0][1]
        for epoch, embedding_set in entries[1:]:
            if embedding_set.dimension != first.dimension:
                raise DataError(
                    f"epoch {epoch}: dimension {embedding_set.dimension} differs from {first.dimension}", "store"
                )
            if embedding_set.has_labels != first.has_labels:
                raise DataError(f"epoch {epoch}: label scheme differs from epoch {entries[0][0]}", "store")
        object.__setattr__(self, "entries", entries)

    @property
    def epochs(self) -> List[int]:
        return [epoch for epoch, _ in self.entries]


def _dimension_and_dtype(path: Path, entries: Dict[str, str]) -> Tuple[int, str]:
    """Validate the `dimension` and `dtype` keys shared by dataset and checkpoint manifests."""
    if "dimension" not in entries:
        raise DataError(f"{path}: missing required key 'dimension'", "store")
    try:
        dimension = int(entries["dimension"])
    except ValueError:
        raise DataError(f"{path}: dimension must be an integer, got '{entries['dimension']}'", "store")
    if dimension < 1:
        raise DataError(f"{path}: dimension must be >= 1", "store")

    dtype = entries.get("dtype", "f32")
    if dtype != "f32":
        raise DataError(f"{path}: unsupported dtype '{dtype}' (only f32)", "store")
    return dimension, dtype


@dataclass(frozen=True)
class DatasetManifest:
    """Parsed manifest: dimension, dtype and per-split file paths."""

    dimension: int
    dtype: str
    data_paths: Dict[str, Path]
    label_paths: Dict[str, Path]
    declared_rows: Dict[str, int]

    @classmethod
    def parse(cls, path: PathLike) -> "DatasetManifest":
        path = Path(path)
        entries = parse_key_value(path)
        base = path.parent

        dimension, dtype = _dimension_and_dtype(path, entries)

        data_paths: Dict[str, Path] = {}
        label_paths: Dict[str, Path] = {}
        declared_rows: Dict[str, int] = {}
        for key, value in entries.items():
            if key in ("dimension", "dtype"):
                continue
            if "." not in key:
                raise DataError(f"{path}: unrecognised key '{key}'", "store")
            split_name, kind = key.rsplit(".", 1)
            split_tag(split_name)
            if kind == "data":
                data_paths[split_name] = base / value
            elif kind == "labels":
                label_paths[split_name] = base / value
            elif kind == "rows":
                try:
                    declared_rows[split_name] = int(value)
                except ValueError:
                    raise DataError(f"{path}: '{key}' must be an integer, got '{value}'", "store")
            else:
                raise DataError(f"{path}: unrecognised key '{key}'", "store")

        for split_name in list(label_paths) + list(declared_rows):
            if split_name not in data_paths:
                raise DataError(f"{path}: '{split_name}' has labels or rows but no data file", "store")
        if not data_paths:
            raise DataError(f"{path}: no '<split>.data' entries", "store")

        return cls(dimension, dtype, data_paths, label_paths, declared_rows)


def _split_order(split_name: str) -> Tuple[int, str]:
    if split_name in SPLITS:
        return SPLITS.index(split_name), split_name
    return len(SPLITS), split_name


def load_manifest(path: PathLike) -> Dict[str, EmbeddingSet]:
    """
    Load every split declared in a manifest.

    Args:
        path: Manifest file

    Returns:
        Mapping split name -> EmbeddingSet (train, test_id, ood, then ood_<name> splits)
    """
    manifest = DatasetManifest.parse(path)
    sets: Dict[str, EmbeddingSet] = {}

    for split_name in sorted(manifest.data_paths, key=_split_order):
        data = read_array(manifest.data_paths[split_name], manifest.dtype, manifest.dimension)
        if split_name in manifest.declared_rows and manifest.declared_rows[split_name] != data.shape[0]:
            raise DataError(
                f"{manifest.data_paths[split_name]}: manifest declares {manifest.declared_rows[split_name]} rows, "
                f"file holds {data.shape[0]}",
                "store",
            )
        labels = None
        if split_name in manifest.label_paths:
            labels = read_array(manifest.label_paths[split_name], "i32")
            if labels.shape[0] != data.shape[0]:
                raise DataError(
                    f"{manifest.label_paths[split_name]}: label length {labels.shape[0]} does not match "
                    f"{data.shape[0]} rows of {split_name}",
                    "store",
                )
        sets[split_name] = EmbeddingSet(data=data, labels=labels, split=split_tag(split_name), name=split_name)
        logger.info("loaded %s: %d x %d", split_name, data.shape[0], data.shape[1])

    return sets


def save_manifest(sets: Dict[str, EmbeddingSet], directory: PathLike, manifest_name: str = MANIFEST_NAME) -> Path:
    """Write each split as f32 (+ i32 labels) and a manifest. Returns the manifest path."""
    directory = make_directory(directory)
    if not sets:
        raise DataError("nothing to save", "store")

    dimensions = {s.dimension for s in sets.values()}
    if len(dimensions) != 1:
        raise DataError(f"splits disagree on dimension: {sorted(dimensions)}", "store")

    entries: List[Tuple[str, str]] = [("dimension", str(dimensions.pop())), ("dtype", "f32")]
    for split_name in sorted(sets, key=_split_order):
        split_tag(split_name)
        embedding_set = sets[split_name]
        data_file = f"{split_name}.f32"
        write_array(directory / data_file, embedding_set.data, "f32")
        entries.append((f"{split_name}.data", data_file))
        entries.append((f"{split_name}.rows", str(embedding_set.size)))
        if embedding_set.has_labels:
            label_file = f"{split_name}.labels"
            write_array(directory / label_file, embedding_set.labels, "i32")
            entries.append((f"{split_name}.labels", label_file))

    manifest_path = directory / manifest_name
    write_key_value(manifest_path, entries)
    return manifest_path


def load_checkpoints(path: PathLike) -> CheckpointSeries:
    """
    Load a checkpoint manifest (`epoch.<n>.data`, `epoch.<n>.labels`).

    Returns:
        CheckpointSeries ordered by epoch
    """
    path = Path(path)
    entries = parse_key_value(path)
    dimension, dtype = _dimension_and_dtype(path, entries)

    data_paths: Dict[int, Path] = {}
    label_paths: Dict[int, Path] = {}
    for key, value in entries.items():
        if key in ("dimension", "dtype"):
            continue
        parts = key.split(".")
        if len(parts) != 3 or parts[0] != "epoch" or parts[2] not in ("data", "labels"):
            raise DataError(f"{path}: unrecognised key '{key}'", "store")
        try:
            epoch = int(parts[1])
        except ValueError:
            raise DataError(f"{path}: epoch must be an integer in '{key}'", "store")
        target = data_paths if parts[2] == "data" else label_paths
        target[epoch] = path.parent / value

    orphans = sorted(set(label_paths) - set(data_paths))
    if orphans:
        raise DataError(f"{path}: epoch {orphans[0]} has labels but no data file", "store")

    checkpoints = []
    for epoch in sorted(data_paths):
        data = read_array(data_paths[epoch], dtype, dimension)
        labels = read_array(label_paths[epoch], "i32") if epoch in label_paths else None
        checkpoints.append(
            (epoch, EmbeddingSet(data=data, labels=labels, split="train", name=f"epoch_{epoch}"))
        )
    return CheckpointSeries(tuple(checkpoints))


def save_checkpoints(series: CheckpointSeries, directory: PathLike, manifest_name: str = "checkpoints.txt") -> Path:
    directory = make_directory(directory)
    entries: List[Tuple[str, str]] = [("dimension", str(series.entries[0][1].dimension)), ("dtype", "f32")]
    for epoch, embedding_set in series.entries:
        data_file = f"epoch_{epoch}.f32"
        write_array(directory / data_file, embedding_set.data, "f32")
        entries.append((f"epoch.{epoch}.data", data_file))
        if embedding_set.has_labels:
            label_file = f"epoch_{epoch}.labels"
            write_array(directory / label_file, embedding_set.labels, "i32")
            entries.append((f"epoch.{epoch}.labels", label_file))
    manifest_path = directory / manifest_name
    write_key_value(manifest_path, entries)
    return manifest_path


def load_csv(path: PathLike, has_label_column: bool = False, split: str = "train") -> EmbeddingSet:
    """
    Load comma-separated embeddings.

    Args:
        path: CSV file, one sample per row, no header
        has_label_column: Treat the final column as an integer label
        split: Split tag for the resulting set

    Returns:
        EmbeddingSet with D = columns (minus the label column)
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"CSV file not found: {path}", "store")

    rows: List[List[float]] = []
    labels: List[int] = []
    width: Optional[int] = None

    with open(path, "r", encoding="utf-8", newline="") as f:
        for row_no, row in enumerate(csv.reader(f), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path}: row {row_no} has {len(row)} columns, expected {width}", "store")

            cells = row[:-1] if has_label_column else row
            if not cells:
                raise DataError(f"{path}: row {row_no} has no embedding columns", "store")
            values = []
            for col_no, cell in enumerate(cells, start=1):
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {row_no}, column {col_no}: cannot parse '{cell.strip()}'", "store")
                if not math.isfinite(value):
                    raise DataError(f"{path}: row {row_no}, column {col_no}: non-finite value '{cell.strip()}'", "store")
                values.append(value)
            rows.append(values)

            if has_label_column:
                try:
                    labels.append(int(row[-1]))
                except ValueError:
                    raise DataError(f"{path}: row {row_no}, column {width}: label '{row[-1].strip()}' is not an integer", "store")

    if not rows:
        raise DataError(f"{path}: no rows", "store")

    return EmbeddingSet(
        data=np.array(rows, dtype=np.float64),
        labels=np.array(labels, dtype=np.int64) if has_label_column else None,
        split=split,
        name=path.stem,
    )


def save_csv(embedding_set: EmbeddingSet, path: PathLike) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            for i, row in enumerate(embedding_set.data):
                cells = [repr(float(v)) for v in row]
                if embedding_set.has_labels:
                    cells.append(str(int(embedding_set.labels[i])))
                writer.writerow(cells)
    except OSError as e:
        raise DataError(f"failed to write {path}: {e.strerror or e}", "store")


def l2_normalize(embedding_set: EmbeddingSet) -> EmbeddingSet:
    """
    Scale every row to unit Euclidean norm.

    Rows already at unit norm (within a few ulps) are kept as-is, which makes
    the operation idempotent bit for bit.
    """
    data = embedding_set.data
    norms = np.linalg.norm(data, axis=1)
    zero = norms == 0.0
    if zero.any():
        row = int(np.flatnonzero(zero)[0])
        raise DataError(f"{embedding_set.name}: zero-norm row {row} cannot be normalized", "store")

    scaled = data / norms[:, None]
    keep = np.abs(norms - 1.0) <= _UNIT_NORM_SLACK
    normalized = np.where(keep[:, None], data, scaled)
    return embedding_set.with_data(normalized)


def prepare(embedding_set: EmbeddingSet, normalize: bool) -> EmbeddingSet:
    """Apply the representation flag: L2-normalized or raw."""
    return l2_normalize(embedding_set) if normalize else embedding_set


def _quantize(values: np.ndarray) -> np.ndarray:
    # synthetic values live at storage precision so save/load is exact
    return values.astype(np.float32).astype(np.float64)


def blob_centers(num_clusters: int, dimension: int, center_scale: float, seed: int) -> np.ndarray:
    """J centers on the sphere of radius s, placed from normalized Gaussian draws."""
    if num_clusters < 1 or dimension < 1:
        raise DataError("blob centers need num_clusters >= 1 and dimension >= 1", "store")
    rng = np.random.default_rng([seed, 0])
    directions = rng.standard_normal((num_clusters, dimension))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    return _quantize(center_scale * directions / norms)


def _draw_around(centers: np.ndarray, per_cluster: int, sigma: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    num_clusters, dimension = centers.shape
    labels = np.repeat(np.arange(num_clusters, dtype=np.int64), per_cluster)
    noise = rng.standard_normal((num_clusters * per_cluster, dimension))
    return _quantize(centers[labels] + sigma * noise), labels


def synth_blobs(
    num_clusters: int,
    per_cluster: int,
    dimension: int,
    center_scale: float,
    sigma: float,
    seed: int,
    split: str = "train",
    draw: int = 0,
    name: str = "",
) -> EmbeddingSet:
    """
    Isotropic Gaussian blobs around blob_centers(J, D, s, seed).

    Args:
        num_clusters: J
        per_cluster: n samples per blob
        dimension: D
        center_scale: s, radius of the sphere holding the centers
        sigma: per-coordinate standard deviation
        seed: Seed for centers and samples
        split: Split tag for the set
        draw: Sample stream index, so train/test splits share centers but not samples
        name: Optional set name

    Returns:
        EmbeddingSet of J * n rows, labels = generating blob
    """
    if per_cluster < 1:
        raise DataError("per_cluster must be >= 1", "store")
    if sigma < 0:
        raise DataError("sigma must be >= 0", "store")

    centers = blob_centers(num_clusters, dimension, center_scale, seed)
    rng = np.random.default_rng([seed, 1, draw])
    data, labels = _draw_around(centers, per_cluster, sigma, rng)
    return EmbeddingSet(data=data, labels=labels, split=split, name=name or split)


def synth_shifted_blobs(
    centers: np.ndarray,
    offset: float,
    per_cluster: int,
    sigma: float,
    seed: int,
    draw: int = 2,
    name: str = "ood",
) -> EmbeddingSet:
    """
    OOD blobs: each ID center moved to a point at distance offset * sigma from it.

    The move stays on the sphere of the center's norm (a rotation towards a
    seeded direction orthogonal to the center), so it changes the direction
    of the blob and is visible to cosine distance. When the chord would exceed
    the sphere's diameter the center is shifted along the orthogonal
    direction instead.

    Returns an unlabelled set tagged `ood`.
    """
    centers = np.asarray(centers, dtype=np.float64)
    if per_cluster < 1 or sigma < 0:
        raise DataError("shifted blobs need per_cluster >= 1 and sigma >= 0", "store")
    rng = np.random.default_rng([seed, 2, draw])
    directions = rng.standard_normal(centers.shape)
    distance = offset * sigma

    shifted = np.empty_like(centers)
    for c, (center, direction) in enumerate(zip(centers, directions)):
        radius = float(np.linalg.norm(center))
        on_sphere = radius > 0.0 and distance <= 2.0 * radius
        if radius > 0.0:
            unit = center / radius
            orthogonal = direction - (direction @ unit) * unit
            # D=1 has no orthogonal direction: shift along the center
            if np.linalg.norm(orthogonal) > 0.0:
                direction = orthogonal
            else:
                direction, on_sphere = unit, False
        direction = direction / np.linalg.norm(direction)
        if on_sphere:
            angle = 2.0 * math.asin(distance / (2.0 * radius))
            shifted[c] = radius * (math.cos(angle) * unit + math.sin(angle) * direction)
        else:
            shifted[c] = center + distance * direction
    data, _ = _draw_around(shifted, per_cluster, sigma, rng)
    return EmbeddingSet(data=data, labels=None, split="ood", name=name)
