"""
Binary + manifest file format.

Arrays are stored as raw little-endian row-major bytes next to a plain-text
manifest of `key = value` lines. Embeddings use 4-byte floats (`f32`),
labels 4-byte signed ints (`i32`), fitted models 8-byte floats (`f64`) so a
reloaded model scores exactly like the one held in memory.
"""

from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from engine.errors import DataError

DTYPES: Dict[str, str] = {
    "f32": "<f4",
    "f64": "<f8",
    "i32": "<i4",
}

PathLike = Union[str, Path]


def _np_dtype(tag: str) -> np.dtype:
    if tag not in DTYPES:
        raise DataError(f"unsupported dtype tag '{tag}' (expected one of {sorted(DTYPES)})", "store")
    return np.dtype(DTYPES[tag])


def parse_key_value(path: PathLike) -> Dict[str, str]:
    """
    Parse a `key = value` manifest.

    Blank lines and lines starting with '#' are skipped. Duplicate keys and
    lines without '=' are rejected with their line number.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}", "store")

    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except (OSError, UnicodeDecodeError) as e:
        raise DataError(f"cannot read manifest {path}: {e}", "store")

    entries: Dict[str, str] = {}
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{line_no}: expected 'key = value', got '{line}'", "store")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise DataError(f"{path}:{line_no}: empty key", "store")
        if key in entries:
            raise DataError(f"{path}:{line_no}: duplicate key '{key}'", "store")
        entries[key] = value
    return entries


def make_directory(directory: PathLike, module: str = "store") -> Path:
    """mkdir -p, with filesystem failures reported as DataError."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create directory {directory}: {e.strerror or e}", module)
    return directory


def write_key_value(path: PathLike, entries: List[Tuple[str, str]]) -> None:
    """Write manifest entries in the given order, LF line endings."""
    lines = [f"{key} = {value}\n" for key, value in entries]
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.writelines(lines)
    except OSError as e:
        raise DataError(f"failed to write {path}: {e.strerror or e}", "store")


def read_array(path: PathLike, dtype: str, row_width: int = 1) -> np.ndarray:
    """
    Read a raw little-endian array.

    Args:
        path: Data file
        dtype: Storage tag (f32, f64, i32)
        row_width: Elements per row; the element count must divide evenly

    Returns:
        2-D array of shape (count / row_width, row_width), or 1-D when row_width is 1
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}", "store")

    np_dtype = _np_dtype(dtype)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataError(f"failed to read {path}: {e.strerror or e}", "store")
    if len(raw) % np_dtype.itemsize != 0:
        raise DataError(
            f"{path}: {len(raw)} bytes is not a multiple of the {dtype} element width {np_dtype.itemsize}",
            "store",
        )
    count = len(raw) // np_dtype.itemsize
    if row_width < 1 or count % row_width != 0:
        raise DataError(
            f"{path}: {count} elements not divisible by dimension {row_width}",
            "store",
        )
    values = np.frombuffer(raw, dtype=np_dtype)
    if row_width == 1:
        return values.copy()
    return values.reshape(count // row_width, row_width).copy()


def write_array(path: PathLike, values: np.ndarray, dtype: str) -> int:
    """Write an array as raw little-endian bytes. Returns the byte count."""
    np_dtype = _np_dtype(dtype)
    data = np.ascontiguousarray(values, dtype=np_dtype).tobytes(order="C")
    try:
        Path(path).write_bytes(data)
    except OSError as e:
        raise DataError(f"failed to write {path}: {e.strerror or e}", "store")
    return len(data)
