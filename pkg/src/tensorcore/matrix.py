# src/tensorcore/matrix.py
"""
Dense 2-D float64 matrices and the helpers around them.

A Matrix is a plain ``numpy.ndarray`` with ``ndim == 2`` and dtype float64.
Vectors are stored as columns (n x 1).
"""
import hashlib
import json
import zlib
from typing import Any, Dict, Iterable, Mapping

import numpy as np

from src.errors import ShapeError

Matrix = np.ndarray


def as_matrix(value: Any, name: str = "matrix") -> Matrix:
    """
    Coerce a scalar, sequence or array into a 2-D float64 matrix.

    Scalars become 1x1, 1-D input becomes a column.
    """
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected at most 2 dimensions, got shape {arr.shape}")
    return arr


def column(values: Iterable[float]) -> Matrix:
    return np.asarray(list(values), dtype=np.float64).reshape(-1, 1)


def zeros(rows: int, cols: int) -> Matrix:
    return np.zeros((rows, cols), dtype=np.float64)


def identity(n: int) -> Matrix:
    return np.eye(n, dtype=np.float64)


def is_finite(m: Matrix) -> bool:
    return bool(np.all(np.isfinite(m)))


def numerical_rank(m: Matrix, tol: float = 1e-8) -> int:
    """Count singular values above ``tol``."""
    if m.size == 0:
        return 0
    return int(np.sum(np.linalg.svd(m, compute_uv=False) > tol))


# ---------------- Random streams ----------------

def rng_stream(seed: int, *names: str) -> np.random.Generator:
    """
    Independent PCG64 generator for ``seed`` and a path of stream names.

    The same (seed, names) pair always yields the same bit stream, and streams
    with different names never overlap.
    """
    spawn_key = tuple(zlib.crc32(n.encode("utf-8")) for n in names)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=spawn_key)))


def gaussian(rng: np.random.Generator, rows: int, cols: int, std: float = 1.0) -> Matrix:
    return rng.standard_normal((rows, cols)) * std


# ---------------- Serialization ----------------

def matrix_to_dict(m: Matrix) -> Dict[str, Any]:
    m = as_matrix(m)
    return {"rows": int(m.shape[0]), "cols": int(m.shape[1]), "data": [float(v) for v in m.ravel()]}


def matrix_from_dict(obj: Mapping[str, Any]) -> Matrix:
    rows, cols, data = int(obj["rows"]), int(obj["cols"]), obj["data"]
    if len(data) != rows * cols:
        raise ShapeError(f"matrix record declares {rows}x{cols} but carries {len(data)} values")
    return np.asarray(data, dtype=np.float64).reshape(rows, cols)


def dumps(obj: Any) -> str:
    # float repr is the shortest string that round-trips, so the text form is lossless
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False)


def loads(text: str) -> Any:
    return json.loads(text)


def content_hash(arrays: Mapping[str, Matrix]) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
        h.update(name.encode("utf-8"))
        h.update(str(arr.shape).encode("utf-8"))
        h.update(arr.tobytes())
    return h.hexdigest()
