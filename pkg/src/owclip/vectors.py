"""Basic vector math over embedding vectors.

Embeddings are plain float64 numpy arrays. Everything downstream assumes
unit L2 norm; ``l2_normalize`` is the single place that enforces it.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, InputError

UNIT_NORM_TOL = 1e-6


def as_f64(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InputError("vector contains non-finite entries")
    return arr


def l2_normalize(values) -> np.ndarray:
    """Return ``values`` scaled to unit L2 norm."""
    arr = as_f64(values)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise InputError("cannot normalize the zero vector")
    return arr / norm


def is_unit(values, tol: float = UNIT_NORM_TOL) -> bool:
    arr = np.asarray(values, dtype=np.float64)
    return bool(abs(float(np.linalg.norm(arr)) - 1.0) <= tol)


def cosine_similarity(a, b) -> float:
    """Normalized dot product of two vectors, clipped to [-1, 1].

    Raises:
        DimensionError: if the vectors have different lengths.
        InputError: if either vector is non-finite or zero.
    """
    va = as_f64(a)
    vb = as_f64(b)
    if va.shape != vb.shape or va.ndim != 1:
        raise DimensionError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise InputError("cosine similarity undefined for the zero vector")
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


def cosine_matrix(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities between row sets, shape (len(rows), len(cols))."""
    r = np.asarray(rows, dtype=np.float64)
    c = np.asarray(cols, dtype=np.float64)
    if r.shape[1] != c.shape[1]:
        raise DimensionError(f"dimension mismatch: {r.shape[1]} vs {c.shape[1]}")
    rn = r / np.linalg.norm(r, axis=1, keepdims=True)
    cn = c / np.linalg.norm(c, axis=1, keepdims=True)
    return np.clip(rn @ cn.T, -1.0, 1.0)
