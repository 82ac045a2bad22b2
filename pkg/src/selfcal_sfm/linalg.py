"""Small dense linear-algebra helpers used across modules."""
from __future__ import annotations

import numpy as np

from .exceptions import DimensionError


def signed_svd(A: np.ndarray):
    """Thin SVD with a deterministic sign per singular pair.

    Each left singular vector is flipped so that its largest-magnitude entry
    is positive; the matching right singular vector is flipped with it.
    """
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, s, Vt * signs[:, None]


def truncate_rank(A: np.ndarray, rank: int = 4) -> np.ndarray:
    """Frobenius-nearest matrix of rank at most ``rank``."""
    if min(A.shape) < rank:
        raise DimensionError(f"matrix {A.shape} is smaller than the target rank {rank}")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    return (U[:, :rank] * s[:rank]) @ Vt[:rank]


def skew(v) -> np.ndarray:
    """Cross-product matrix ``[v]_x``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def null_vector(A: np.ndarray) -> np.ndarray:
    """Unit right null vector from the last right singular vector."""
    _, _, Vt = np.linalg.svd(A)
    return Vt[-1]


def row_complement(P: np.ndarray) -> np.ndarray:
    """Unit vector orthogonal to the rows of a full-rank 3x4 matrix.

    The sign is fixed so that ``det([P; c]) > 0``. Computed from signed 3x3
    minors, which keeps it a smooth function of ``P``.
    """
    c = np.array([(-1.0) ** k * np.linalg.det(np.delete(P, k, axis=1)) for k in range(4)])
    # Laplace expansion along the appended row gives det([P; c]) = -|c|^2
    c = -c
    norm = np.linalg.norm(c)
    if norm == 0:
        raise DimensionError("matrix is rank deficient; no unique complement")
    return c / norm
