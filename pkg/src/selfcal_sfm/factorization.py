"""Measurement matrices and Sturm/Triggs projective factorization.

Tracks are stored as an ``(n, m, 3)`` array of homogeneous image points
(view ``i``, track ``j``); projective depths as an ``(n, m)`` array. The
measurement matrix stacks ``depth * point`` into a ``(3n, m)`` array whose
rows ``3i:3i+3`` belong to view ``i``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    DegenerateConfigurationError,
    DimensionError,
    InsufficientPointsError,
    RankDeficiencyError,
)
from .geometry import ProjectiveReconstruction, apply_homography
from .linalg import row_complement, signed_svd, skew

logger = logging.getLogger(__name__)

DEPTH_DEGENERACY_TOL = 1e-10
RANK4_REL_TOL = 1e-12


@dataclass(frozen=True)
class MeasurementMatrix:
    """A ``(3R, C)`` matrix with per-view and per-track validity flags.

    Padded rows and columns are exactly zero. ``image_transform`` is the 3x3
    map applied to pixel coordinates before the entries were formed
    (identity when the entries are already in the working frame).
    """

    entries: np.ndarray
    row_valid: np.ndarray = None
    col_valid: np.ndarray = None
    image_transform: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        E = np.array(self.entries, dtype=float)
        if E.ndim != 2 or E.shape[0] % 3:
            raise DimensionError(f"entries must be (3n, m), got {E.shape}")
        n, m = E.shape[0] // 3, E.shape[1]
        rv = np.ones(n, bool) if self.row_valid is None else np.asarray(self.row_valid, bool)
        cv = np.ones(m, bool) if self.col_valid is None else np.asarray(self.col_valid, bool)
        if rv.shape != (n,) or cv.shape != (m,):
            raise DimensionError("validity masks do not match the matrix shape")
        E[np.repeat(~rv, 3), :] = 0.0
        E[:, ~cv] = 0.0
        T = np.asarray(self.image_transform, dtype=float)
        if T.shape != (3, 3):
            raise DimensionError("image_transform must be 3x3")
        for a in (E, rv, cv, T):
            a.setflags(write=False)
        object.__setattr__(self, "entries", E)
        object.__setattr__(self, "row_valid", rv)
        object.__setattr__(self, "col_valid", cv)
        object.__setattr__(self, "image_transform", T)

    @property
    def shape(self):
        return self.entries.shape

    @property
    def n_views(self) -> int:
        return int(self.row_valid.sum())

    @property
    def n_tracks(self) -> int:
        return int(self.col_valid.sum())

    @property
    def row_mask(self) -> np.ndarray:
        return np.repeat(self.row_valid, 3)

    def valid_block(self) -> np.ndarray:
        return self.entries[np.ix_(self.row_mask, self.col_valid)]

    def with_valid_block(self, block: np.ndarray) -> "MeasurementMatrix":
        """Copy of this matrix with the valid block replaced."""
        E = np.zeros(self.shape)
        E[np.ix_(self.row_mask, self.col_valid)] = block
        return MeasurementMatrix(E, self.row_valid, self.col_valid, self.image_transform)

    def select_columns(self, keep) -> "MeasurementMatrix":
        """Sub-matrix of the valid block restricted to the tracks in ``keep``."""
        block = self.valid_block()[:, np.asarray(keep)]
        return MeasurementMatrix(block, image_transform=self.image_transform)


@dataclass(frozen=True)
class DepthAssignment:
    lambdas: np.ndarray  # (n, m)
    degenerate: np.ndarray = None  # (m,) tracks to exclude

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        deg = np.zeros(lam.shape[1], bool) if self.degenerate is None else np.asarray(self.degenerate, bool)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "degenerate", deg)


def _as_tracks(tracks) -> np.ndarray:
    x = np.asarray(tracks, dtype=float)
    if x.ndim != 3 or x.shape[2] not in (2, 3):
        raise DimensionError(f"tracks must have shape (n, m, 3), got {x.shape}")
    if x.shape[2] == 2:
        x = np.concatenate([x, np.ones(x.shape[:2] + (1,))], axis=2)
    return x


def build_measurement_matrix(tracks, depths, image_transform=None) -> MeasurementMatrix:
    """Stack ``depth * point`` for every observation.

    When ``image_transform`` is given the points are mapped through it first
    and the transform is recorded on the result.
    """
    x = _as_tracks(tracks)
    lam = depths.lambdas if isinstance(depths, DepthAssignment) else np.asarray(depths, dtype=float)
    if lam.shape != x.shape[:2]:
        raise DimensionError(f"depths {lam.shape} do not match tracks {x.shape[:2]}")
    T = np.eye(3) if image_transform is None else np.asarray(image_transform, dtype=float)
    x = x @ T.T
    n, m = lam.shape
    E = (lam[:, :, None] * x).transpose(0, 2, 1).reshape(3 * n, m)
    return MeasurementMatrix(E, image_transform=T)


def _hartley_normalization(pts: np.ndarray) -> np.ndarray:
    xy = pts[:, :2] / pts[:, 2:3]
    c = xy.mean(axis=0)
    d = np.mean(np.linalg.norm(xy - c, axis=1))
    if d == 0:
        raise DegenerateConfigurationError("all points coincide")
    s = np.sqrt(2.0) / d
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def estimate_fundamental(pts_a, pts_b) -> np.ndarray:
    """Normalized 8-point estimate of ``F`` with ``x_b^T F x_a = 0``.

    Rank 2 is enforced by zeroing the smallest singular value and the result
    has unit Frobenius norm.
    """
    a = _as_tracks(np.asarray(pts_a, dtype=float)[None])[0]
    b = _as_tracks(np.asarray(pts_b, dtype=float)[None])[0]
    if a.shape != b.shape:
        raise DimensionError("point lists differ in length")
    if len(a) < 8:
        raise InsufficientPointsError(f"need at least 8 correspondences, got {len(a)}")
    Ta, Tb = _hartley_normalization(a), _hartley_normalization(b)
    an = a @ Ta.T
    bn = b @ Tb.T
    A = np.einsum("ki,kj->kij", bn, an).reshape(len(a), 9)
    _, s, Vt = np.linalg.svd(A)
    if np.sum(s > 1e-12 * s[0]) < 8:
        raise DegenerateConfigurationError("design matrix has rank below 8")
    F = Vt[-1].reshape(3, 3)
    U, s, Vt = np.linalg.svd(F)
    F = U @ np.diag([s[0], s[1], 0.0]) @ Vt
    F = Tb.T @ F @ Ta
    return F / np.linalg.norm(F)


def epipole(F) -> np.ndarray:
    """Unit left null vector ``e`` of ``F`` (``F^T e = 0``)."""
    F = np.asarray(F, dtype=float)
    U, s, _ = np.linalg.svd(F)
    if s[1] <= 1e-12 * s[0]:
        raise RankDeficiencyError("fundamental matrix has rank below 2")
    e = U[:, 2]
    return e if e[np.argmax(np.abs(e))] > 0 else -e


def estimate_depths(tracks, strategy: str = "unit", ground_truth=None) -> DepthAssignment:
    """Initial projective depths.

    ``"unit"`` sets every depth to one, ``"ground_truth"`` passes
    ``ground_truth`` through and ``"fundamental_chain"`` propagates depths
    from view 0 to every other view with the pairwise epipolar relation.
    """
    x = _as_tracks(tracks)
    n, m = x.shape[:2]
    if strategy == "unit":
        return DepthAssignment(np.ones((n, m)))
    if strategy == "ground_truth":
        if ground_truth is None:
            raise ValueError("ground_truth strategy needs ground-truth depths")
        gt = ground_truth if isinstance(ground_truth, DepthAssignment) else DepthAssignment(ground_truth)
        if gt.lambdas.shape != (n, m):
            raise DimensionError("ground-truth depths do not match tracks")
        return gt
    if strategy != "fundamental_chain":
        raise ValueError(f"unknown depth strategy {strategy!r}")
    if n < 2:
        raise DimensionError("fundamental_chain needs at least two views")
    lam = np.ones((n, m))
    degenerate = np.zeros(m, bool)
    for i in range(1, n):
        F = estimate_fundamental(x[0], x[i])
        e = epipole(F)
        lam[i], bad = _propagate_depths(F, e, x[0], x[i], lam[0])
        degenerate |= bad
    if degenerate.any():
        logger.info("%d tracks have degenerate depths", int(degenerate.sum()))
    return DepthAssignment(lam, degenerate)


def _propagate_depths(F, e, x_ref, x_other, lam_ref):
    """Depths in another view from depths in the reference view.

    Uses ``(e x x_i) lambda_i = (F x_ref) lambda_ref`` solved in the least
    squares sense.
    """
    ex = x_other @ skew(e).T  # rows: e x x_other
    lines = x_ref @ F.T
    denom = np.einsum("ij,ij->i", ex, ex)
    degenerate = denom < DEPTH_DEGENERACY_TOL * np.einsum("ij,ij->i", x_other, x_other)
    safe = np.where(degenerate, 1.0, denom)
    lam = lam_ref * np.einsum("ij,ij->i", ex, lines) / safe
    degenerate |= np.abs(lam) < DEPTH_DEGENERACY_TOL
    lam = np.where(degenerate, 1.0, lam)
    return lam, degenerate


def rank4_project(M: MeasurementMatrix) -> MeasurementMatrix:
    """Frobenius-nearest rank-4 matrix, acting on the valid block only."""
    B = M.valid_block()
    if min(B.shape) < 4:
        raise DimensionError(f"valid block {B.shape} is too small for rank 4")
    U, s, Vt = signed_svd(B)
    return M.with_valid_block((U[:, :4] * s[:4]) @ Vt[:4])


def sturm_triggs_factorize(M: MeasurementMatrix) -> ProjectiveReconstruction:
    """Split the rank-4 part of ``M`` into a camera stack and a point matrix.

    Singular values are shared symmetrically: ``P = U4 D^1/2`` and
    ``X = D^1/2 V4^T``. Only valid views and tracks are returned.
    """
    B = M.valid_block()
    if min(B.shape) < 4:
        raise DimensionError(f"valid block {B.shape} is too small for rank 4")
    U, s, Vt = signed_svd(B)
    if s[0] == 0 or s[3] < RANK4_REL_TOL * s[0]:
        raise RankDeficiencyError("measurement matrix has rank below 4")
    root = np.sqrt(s[:4])
    cams = (U[:, :4] * root).reshape(-1, 3, 4)
    pts = root[:, None] * Vt[:4]
    return ProjectiveReconstruction(cams, pts)


def first_camera_homography(P1) -> np.ndarray:
    """Homography ``H = [P1; c]`` with ``c`` the unit complement of P1's rows."""
    P1 = np.asarray(P1, dtype=float)
    s = np.linalg.svd(P1, compute_uv=False)
    if s[2] <= 1e-12 * s[0]:
        raise RankDeficiencyError("first camera does not have rank 3")
    return np.vstack([P1, row_complement(P1)])


def fourth_column_sign(cameras: np.ndarray) -> float:
    """Sign making the largest-magnitude fourth-column entry of views 2..n positive.

    Fixes the remaining sign freedom of the first-camera frame so that it does
    not depend on the signs of singular vectors.
    """
    col = cameras[1:, :, 3].ravel()
    if col.size == 0:
        return 1.0
    v = col[np.argmax(np.abs(col))]
    return -1.0 if v < 0 else 1.0


def normalize_first_camera(recon: ProjectiveReconstruction) -> ProjectiveReconstruction:
    """Re-express a reconstruction so that its first camera is ``[I | 0]``."""
    H = first_camera_homography(recon.cameras[0])
    if fourth_column_sign(recon.cameras @ np.linalg.inv(H)) < 0:
        H[3] = -H[3]
    out = apply_homography(H, recon)
    cams = out.cameras.copy()
    cams[0] = np.eye(3, 4)  # exact, removes round-off
    return ProjectiveReconstruction(cams, out.points)


def weighted_reprojection_residual(M: MeasurementMatrix, recon: ProjectiveReconstruction, w) -> float:
    """``|| (M - P X) diag(w) ||_F`` over the valid block."""
    B = M.valid_block()
    w = np.asarray(w, dtype=float)
    R = B - recon.project()
    if R.shape != B.shape or w.shape != (B.shape[1],):
        raise DimensionError("dimensions of M, reconstruction and weights disagree")
    return float(np.linalg.norm(R * w))
