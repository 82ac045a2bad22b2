"""Evaluation metrics and sweep aggregation.

All metrics are pure functions. Image errors are measured in the frame of
the tracks (pixels for synthetic scenes); 3D errors compare dehomogenized
points after aligning the estimate to the truth.
"""
from __future__ import annotations

import csv
import io
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import DimensionError, InsufficientPointsError, SingularHomographyError
from .geometry import DEGENERACY_TOL, ProjectiveReconstruction, fit_point_homography

ALIGNMENTS = ("homography", "similarity")


@dataclass(frozen=True)
class ClassificationReport:
    precision: float
    recall: float
    f1: float
    true_positives: int
    false_positives: int
    false_negatives: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ReconstructionReport:
    """Reconstruction metrics; an entry is ``None`` when it could not be computed."""

    error_2d_px: float | None
    error_3d_rel: float | None
    focal_error_rel: float | None
    alignment_used: str = "homography"

    def __post_init__(self):
        if self.alignment_used not in ALIGNMENTS:
            raise ValueError(f"unknown alignment {self.alignment_used!r}")
        for name in ("error_2d_px", "error_3d_rel", "focal_error_rel"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")

    def to_dict(self) -> dict:
        return asdict(self)


def _mask(mask, m: int) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (m,):
        raise DimensionError(f"mask must have length {m}, got {mask.shape}")
    return mask


def f1_score(pred_mask, true_mask) -> ClassificationReport:
    """Inlier-detection precision, recall and F1 (the positive class is "inlier")."""
    pred = np.asarray(pred_mask, dtype=bool)
    true = np.asarray(true_mask, dtype=bool)
    if pred.shape != true.shape or pred.ndim != 1:
        raise DimensionError(f"masks differ in shape: {pred.shape} vs {true.shape}")
    tp = int(np.sum(pred & true))
    fp = int(np.sum(pred & ~true))
    fn = int(np.sum(~pred & true))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    denom = precision + recall
    f1 = 2 * precision * recall / denom if denom > 0 else 0.0
    return ClassificationReport(precision, recall, f1, tp, fp, fn)


def error_2d(recon: ProjectiveReconstruction, tracks, eval_mask, return_excluded: bool = False):
    """Mean over masked points of the per-point RMS reprojection distance.

    For every point the Euclidean distances between reprojected and observed
    image points are combined as an RMS over views; those RMS values are then
    averaged. ``recon`` points are matched to the masked track columns in
    order, so a reconstruction of only the inliers pairs with
    ``eval_mask`` selecting exactly those columns. Observations that project
    onto the camera centre are dropped; with ``return_excluded`` their count
    is returned as well.
    """
    x = np.asarray(tracks, dtype=float)
    if x.ndim != 3 or x.shape[2] not in (2, 3):
        raise DimensionError(f"tracks must be (n, m, 3), got {x.shape}")
    n, m = x.shape[:2]
    mask = _mask(eval_mask, m)
    if recon.n_views != n:
        raise DimensionError(f"reconstruction has {recon.n_views} views, tracks have {n}")
    cols = np.flatnonzero(mask)
    if recon.n_points == m:
        X = recon.points[:, cols]
    elif recon.n_points == len(cols):
        X = recon.points
    else:
        raise DimensionError(f"reconstruction has {recon.n_points} points for {len(cols)} evaluated tracks")
    if len(cols) == 0:
        raise InsufficientPointsError("evaluation mask selects no points")
    obs = x[:, cols, :2] / x[:, cols, 2:3] if x.shape[2] == 3 else x[:, cols]
    proj = recon.cameras @ X  # (n, 3, k)
    z = proj[:, 2, :]
    scale = np.linalg.norm(proj, axis=1)
    ok = np.abs(z) > DEGENERACY_TOL * np.where(scale > 0, scale, 1.0)
    safe = np.where(ok, z, 1.0)
    reproj = (proj[:, :2, :] / safe[:, None, :]).transpose(0, 2, 1)
    sq = np.sum((reproj - obs) ** 2, axis=2)  # (n, k)
    counts = ok.sum(axis=0)
    used = counts > 0
    if not used.any():
        raise InsufficientPointsError("every observation is degenerate")
    rms = np.sqrt(np.sum(np.where(ok, sq, 0.0), axis=0)[used] / counts[used])
    err = float(np.mean(rms))
    return (err, int((~ok).sum())) if return_excluded else err


def _dehom(points: np.ndarray) -> np.ndarray:
    w = points[3]
    if np.any(np.abs(w) <= DEGENERACY_TOL * np.linalg.norm(points, axis=0)):
        raise SingularHomographyError("aligned point lies at infinity")
    return points[:3] / w


def similarity_align(src: np.ndarray, dst: np.ndarray):
    """Least-squares ``s, R, t`` with ``dst ~ s R src + t`` for ``(3, k)`` point sets.

    ``R`` is any orthogonal matrix. An improper ``R`` stands for a negative
    scale, which a metric upgrade cannot rule out because homogeneous
    coordinates fix the sign of a reconstruction only up to ``-1``.
    """
    mu_s = src.mean(axis=1, keepdims=True)
    mu_d = dst.mean(axis=1, keepdims=True)
    A = src - mu_s
    D = dst - mu_d
    var = np.sum(A**2) / src.shape[1]
    if var <= 0:
        raise SingularHomographyError("source points coincide")
    U, sv, Vt = np.linalg.svd(D @ A.T / src.shape[1])
    R = U @ Vt
    s = float(np.sum(sv) / var)
    t = mu_d - s * R @ mu_s
    return s, R, t[:, 0]


def align_points(points_est, points_true, alignment: str = "homography") -> np.ndarray:
    """Estimated points mapped onto the truth, dehomogenized to ``(3, k)``."""
    est = np.asarray(points_est, dtype=float)
    true = np.asarray(points_true, dtype=float)
    if alignment == "homography":
        if est.shape[1] < 5:
            raise InsufficientPointsError("homography alignment needs at least 5 points")
        H = fit_point_homography(est, true)
        if abs(np.linalg.det(H)) <= DEGENERACY_TOL * np.linalg.norm(H) ** 4:
            raise SingularHomographyError("aligning homography is singular")
        return _dehom(H @ est)
    if alignment == "similarity":
        if est.shape[1] < 3:
            raise InsufficientPointsError("similarity alignment needs at least 3 points")
        a, b = _dehom(est), _dehom(true)
        s, R, t = similarity_align(a, b)
        return s * R @ a + t[:, None]
    raise ValueError(f"alignment must be one of {ALIGNMENTS}, got {alignment!r}")


def error_3d(points_est, points_true, mask, alignment: str = "homography") -> float:
    """Mean relative 3D error ``|X - X_gt| / |X_gt|`` after alignment."""
    est = np.asarray(points_est, dtype=float)
    true = np.asarray(points_true, dtype=float)
    if est.shape != true.shape or est.ndim != 2 or est.shape[0] != 4:
        raise DimensionError(f"point sets must both be (4, m), got {est.shape} and {true.shape}")
    mask = _mask(mask, est.shape[1])
    est, true = est[:, mask], true[:, mask]
    aligned = align_points(est, true, alignment)
    gt = _dehom(true)
    return float(np.mean(np.linalg.norm(aligned - gt, axis=0) / np.linalg.norm(gt, axis=0)))


def focal_error(K_est, K_true) -> float:
    """``|f - f_gt| / f_gt`` with ``f = (fx + fy) / 2``."""
    K_est = np.asarray(K_est, dtype=float)
    K_true = np.asarray(K_true, dtype=float)
    f = 0.5 * (K_est[0, 0] + K_est[1, 1]) / K_est[2, 2]
    f_gt = 0.5 * (K_true[0, 0] + K_true[1, 1]) / K_true[2, 2]
    return float(abs(f - f_gt) / f_gt)


def aggregate_sweep(results, keys=None) -> list:
    """Group ``(config, metrics)`` pairs and summarise every metric.

    ``config`` and ``metrics`` are flat dicts. Results are grouped by the
    config entries named in ``keys`` (all config entries by default), in
    order of first appearance. Each output row holds the group fields, the
    trial count and ``<metric>_mean`` / ``<metric>_std`` (sample standard
    deviation, 0 for a single trial). Missing or ``None`` metric values are
    left out of that metric's statistics.
    """
    results = list(results)
    if not results:
        raise ValueError("no results to aggregate")
    groups: OrderedDict = OrderedDict()
    metric_names: list = []
    for config, metrics in results:
        names = list(config) if keys is None else list(keys)
        gk = tuple((k, config[k]) for k in names)
        groups.setdefault(gk, []).append(metrics)
        for k in metrics:
            if k not in metric_names:
                metric_names.append(k)
    table = []
    for gk, rows in groups.items():
        row = dict(gk)
        row["n_trials"] = len(rows)
        for name in metric_names:
            vals = np.array([r[name] for r in rows if r.get(name) is not None], dtype=float)
            row[f"{name}_mean"] = float(vals.mean()) if vals.size else None
            row[f"{name}_std"] = float(vals.std(ddof=1)) if vals.size > 1 else (0.0 if vals.size else None)
            row[f"{name}_count"] = int(vals.size)
        table.append(row)
    return table


def table_to_csv(rows, path=None) -> str:
    """CSV text of a list of dicts (columns from the first row); optionally written to ``path``."""
    rows = list(rows)
    buf = io.StringIO()
    if rows:
        fields = list(rows[0])
        for r in rows[1:]:
            fields += [k for k in r if k not in fields]
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: "" if r.get(k) is None else r.get(k) for k in fields})
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
