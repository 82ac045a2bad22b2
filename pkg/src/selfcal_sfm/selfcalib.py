"""Dual absolute quadric, DIAC projection and the projective-to-metric upgrade.

All quantities live in the projective frame whose first camera is
``[I | 0]``; the plane at infinity there is ``(n_inf, 1)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateProjectionError, NotPositiveDefiniteError, SingularHomographyError
from .geometry import ProjectiveReconstruction, apply_homography, intrinsics_params

DIAC_DEGENERACY_TOL = 1e-12


def check_intrinsics(K) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.shape != (3, 3):
        raise ValueError(f"intrinsics must be 3x3, got {K.shape}")
    if np.any(np.tril(K, -1)):
        raise ValueError("intrinsics must be upper triangular")
    return K


@dataclass(frozen=True)
class CalibrationEstimate:
    K: np.ndarray
    n_inf: np.ndarray
    frame: str = "pixel"

    def __post_init__(self):
        if self.frame not in ("pixel", "normalized"):
            raise ValueError(f"frame must be 'pixel' or 'normalized', got {self.frame!r}")
        object.__setattr__(self, "K", check_intrinsics(self.K))
        object.__setattr__(self, "n_inf", np.asarray(self.n_inf, dtype=float).reshape(3))

    @property
    def Q(self) -> np.ndarray:
        return daq_from_calibration(self.K, self.n_inf)

    @property
    def H_M(self) -> np.ndarray:
        return metric_upgrade_homography(self.K, self.n_inf)[0]

    @property
    def focal(self) -> float:
        return 0.5 * (self.K[0, 0] + self.K[1, 1])

    def to_dict(self) -> dict:
        return {"K": self.K.tolist(), "n_inf": self.n_inf.tolist(), "frame": self.frame}

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationEstimate":
        for key in ("K", "n_inf"):
            if key not in d:
                raise ValueError(f"calibration is missing field {key!r}")
        return cls(np.array(d["K"], dtype=float), np.array(d["n_inf"], dtype=float), d.get("frame", "pixel"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "CalibrationEstimate":
        return cls.from_dict(json.loads(text))

    def params(self) -> np.ndarray:
        return intrinsics_params(self.K)


def daq_from_calibration(K, n_inf) -> np.ndarray:
    """``Q = [[w, -w n], [-n^T w, n^T w n]]`` with ``w = K K^T``."""
    K = check_intrinsics(K)
    n = np.asarray(n_inf, dtype=float).reshape(3)
    w = K @ K.T
    wn = w @ n
    Q = np.empty((4, 4))
    Q[:3, :3] = w
    Q[:3, 3] = -wn
    Q[3, :3] = -wn
    Q[3, 3] = n @ wn
    return Q


def diac_project(P, Q) -> np.ndarray:
    """Frobenius-normalised ``P Q P^T`` with positive trace."""
    P = np.asarray(P, dtype=float)
    w = P @ Q @ P.T
    norm = np.linalg.norm(w)
    if norm < DIAC_DEGENERACY_TOL * max(np.linalg.norm(P) ** 2 * np.linalg.norm(Q), 1e-300):
        raise DegenerateProjectionError("projected DIAC vanishes")
    w = w / norm
    return w if np.trace(w) >= 0 else -w


def daq_residual(cameras, K, n_inf, return_skipped: bool = False):
    """Sum over views of ``|| PQP^T/|PQP^T| - w1/|w1| ||_F``.

    Views whose projected DIAC vanishes are skipped; with
    ``return_skipped=True`` their count is returned alongside the residual.
    """
    K = check_intrinsics(K)
    Q = daq_from_calibration(K, n_inf)
    w1 = K @ K.T
    w1 = w1 / np.linalg.norm(w1)
    total, skipped = 0.0, 0
    for P in np.asarray(cameras, dtype=float):
        A = P @ Q @ P.T
        norm = np.linalg.norm(A)
        if norm < DIAC_DEGENERACY_TOL * max(np.linalg.norm(P) ** 2 * np.linalg.norm(Q), 1e-300):
            skipped += 1
            continue
        total += np.linalg.norm(A / norm - w1)
    return (total, skipped) if return_skipped else total


def daq_residual_batch(cameras: np.ndarray, K: np.ndarray, n_inf: np.ndarray) -> float:
    """Vectorised :func:`daq_residual` for an ``(n, 3, 4)`` stack; no degeneracy checks."""
    Q = daq_from_calibration(K, n_inf)
    w1 = K @ K.T
    w1 = w1 / np.linalg.norm(w1)
    A = cameras @ Q @ cameras.transpose(0, 2, 1)
    norms = np.sqrt(np.einsum("kij,kij->k", A, A))
    D = A / norms[:, None, None] - w1
    return float(np.sum(np.sqrt(np.einsum("kij,kij->k", D, D))))


def intrinsics_from_diac(omega) -> np.ndarray:
    """Upper-triangular ``K`` with ``K K^T ~ omega`` and ``K[2, 2] = 1``."""
    omega = np.asarray(omega, dtype=float)
    omega = 0.5 * (omega + omega.T)
    if np.trace(omega) < 0:
        omega = -omega
    J = np.eye(3)[::-1]
    try:
        L = np.linalg.cholesky(J @ omega @ J)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("DIAC is not positive definite") from exc
    K = J @ L @ J
    return K / K[2, 2]


def metric_upgrade_homography(K, n_inf):
    """``H_M = [[K^-1, 0], [n^T, 1]]`` and its closed-form inverse."""
    K = check_intrinsics(K)
    if abs(np.linalg.det(K)) < 1e-300 or np.any(np.diag(K) == 0):
        raise SingularHomographyError("intrinsics are singular")
    n = np.asarray(n_inf, dtype=float).reshape(3)
    H = np.zeros((4, 4))
    H[:3, :3] = np.linalg.inv(K)
    H[3, :3] = n
    H[3, 3] = 1.0
    H_inv = np.zeros((4, 4))
    H_inv[:3, :3] = K
    H_inv[3, :3] = -n @ K
    H_inv[3, 3] = 1.0
    return H, H_inv


def metric_upgrade(recon: ProjectiveReconstruction, K, n_inf) -> ProjectiveReconstruction:
    """Apply ``H_M`` to a reconstruction whose first camera is ``[I | 0]``."""
    H, _ = metric_upgrade_homography(K, n_inf)
    return apply_homography(H, recon)


def plane_at_infinity_from_homography(H) -> np.ndarray:
    """``n_inf`` of a projective frame, given the homography taking it to a metric frame."""
    H = np.asarray(H, dtype=float)
    return H[3, :3] / H[3, 3]
