"""Homogeneous projective-geometry primitives.

Cameras are 3x4 arrays, homogeneous image points 3-vectors and homogeneous
world points 4-vectors. A reconstruction stores its cameras as an
``(n, 3, 4)`` stack and its points as the columns of a ``(4, m)`` array.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import (
    DegenerateProjectionError,
    DimensionError,
    PointAtInfinityError,
    SingularHomographyError,
)

# relative to the vector norm
DEGENERACY_TOL = 1e-12
PROJECTIVE_EQ_TOL = 1e-9
# absolute determinant threshold for a usable 4x4 homography
HOMOGRAPHY_DET_TOL = 1e-12


@dataclass(frozen=True)
class ProjectiveReconstruction:
    """Camera stack and point set, defined up to a 4x4 homography."""

    cameras: np.ndarray  # (n, 3, 4)
    points: np.ndarray  # (4, m)

    def __post_init__(self):
        cams = np.asarray(self.cameras, dtype=float)
        pts = np.asarray(self.points, dtype=float)
        if cams.ndim != 3 or cams.shape[1:] != (3, 4):
            raise DimensionError(f"cameras must have shape (n, 3, 4), got {cams.shape}")
        if pts.ndim != 2 or pts.shape[0] != 4:
            raise DimensionError(f"points must have shape (4, m), got {pts.shape}")
        cams.setflags(write=False)
        pts.setflags(write=False)
        object.__setattr__(self, "cameras", cams)
        object.__setattr__(self, "points", pts)

    @property
    def n_views(self) -> int:
        return self.cameras.shape[0]

    @property
    def n_points(self) -> int:
        return self.points.shape[1]

    def camera_stack(self) -> np.ndarray:
        """Cameras stacked vertically into a ``(3n, 4)`` matrix."""
        return self.cameras.reshape(-1, 4)

    def project(self) -> np.ndarray:
        """The ``(3n, m)`` product of the camera stack and the point matrix."""
        return self.camera_stack() @ self.points


def as_hom(v, dim: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (dim,):
        raise DimensionError(f"expected a {dim}-vector, got shape {v.shape}")
    if not np.any(v):
        raise DimensionError("homogeneous vector must be nonzero")
    return v


def projectively_equal(a, b, tol: float = PROJECTIVE_EQ_TOL) -> bool:
    """True when ``a`` and ``b`` agree up to a nonzero scale.

    Both vectors are normalised to unit length and the sign is resolved by
    their dot product before comparing.
    """
    a = np.ravel(np.asarray(a, dtype=float))
    b = np.ravel(np.asarray(b, dtype=float))
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return False
    a, b = a / na, b / nb
    if a @ b < 0:
        b = -b
    return bool(np.linalg.norm(a - b) < tol)


def cross_residual(x, y) -> float:
    """Norm of ``x/|x| cross y/|y|``; zero iff two image points coincide projectively."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.linalg.norm(np.cross(x / np.linalg.norm(x), y / np.linalg.norm(y))))


def project_point(P, X) -> np.ndarray:
    """Project a homogeneous world point through a 3x4 camera."""
    P = np.asarray(P, dtype=float)
    if P.shape != (3, 4):
        raise DimensionError(f"camera must be 3x4, got {P.shape}")
    X = as_hom(X, 4)
    x = P @ X
    if np.linalg.norm(x) < DEGENERACY_TOL * np.linalg.norm(P) * np.linalg.norm(X):
        raise DegenerateProjectionError("point projects to the zero vector (camera centre)")
    return x


def dehomogenize(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise DimensionError(f"expected a homogeneous vector, got shape {v.shape}")
    if abs(v[-1]) <= DEGENERACY_TOL * np.linalg.norm(v):
        raise PointAtInfinityError(f"last coordinate of {v} is zero")
    return v[:-1] / v[-1]


def check_homography(H) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    if H.shape != (4, 4):
        raise DimensionError(f"homography must be 4x4, got {H.shape}")
    if abs(np.linalg.det(H)) <= HOMOGRAPHY_DET_TOL:
        raise SingularHomographyError("homography is singular")
    return H


def apply_homography(H, recon: ProjectiveReconstruction) -> ProjectiveReconstruction:
    """Map cameras to ``P H^-1`` and points to ``H X``; projections are preserved."""
    H = check_homography(H)
    H_inv = np.linalg.inv(H)
    return ProjectiveReconstruction(recon.cameras @ H_inv, H @ recon.points)


def intrinsics_matrix(fx: float, fy: float, skew: float, cx: float, cy: float) -> np.ndarray:
    return np.array([[fx, skew, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])


def intrinsics_params(K) -> np.ndarray:
    """Inverse of :func:`intrinsics_matrix` after scaling ``K[2, 2]`` to one."""
    K = np.asarray(K, dtype=float) / K[2, 2]
    return np.array([K[0, 0], K[1, 1], K[0, 1], K[0, 2], K[1, 2]])


def rotation_xyz(ax: float, ay: float, az: float) -> np.ndarray:
    """Rotation composed as ``Rz @ Ry @ Rx`` from per-axis angles in radians."""
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def fit_point_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Direct linear transform for a 4x4 ``H`` with ``dst ~ H src`` (columns are points)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.shape[0] != 4 or src.shape[1] < 5:
        raise DimensionError("need matching (4, k) point sets with k >= 5")
    src = src / np.linalg.norm(src, axis=0)
    dst = dst / np.linalg.norm(dst, axis=0)
    rows = []
    # dst_a * (H src)_b - dst_b * (H src)_a = 0 for every coordinate pair
    for a in range(4):
        for b in range(a + 1, 4):
            R = np.zeros((src.shape[1], 16))
            R[:, 4 * b : 4 * b + 4] = dst[a][:, None] * src.T
            R[:, 4 * a : 4 * a + 4] = -dst[b][:, None] * src.T
            rows.append(R)
    A = np.vstack(rows)
    _, _, Vt = np.linalg.svd(A)
    return Vt[-1].reshape(4, 4)
