"""Single trials on synthetic scenes: run one method variant and score it.

Three variants are recognised: ``baseline`` (plain projective factorization
of every track), ``beta0`` (the robust solver without the DAQ term) and
``beta1`` (the robust solver with the configured positive ``beta``).
"""
from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np

from .evalkit import ReconstructionReport, error_2d, error_3d, f1_score, focal_error
from .exceptions import GeometryError
from .factorization import MeasurementMatrix
from .geometry import ProjectiveReconstruction
from .selfcalib import metric_upgrade
from .solver import SolverConfig, baseline_factorization, solve
from .synthgen import GroundTruthScene, SceneConfig, make_problem

logger = logging.getLogger(__name__)

VARIANTS = ("baseline", "beta0", "beta1")
METRICS = ("f1", "precision", "recall", "error_2d_px", "error_3d_rel", "focal_error_rel")


def variant_config(variant: str, cfg: SolverConfig) -> SolverConfig:
    """Solver configuration for ``variant`` (``beta1`` keeps ``cfg.beta``, defaulting to 1 if it is 0)."""
    if variant == "beta0":
        return replace(cfg, beta=0.0)
    if variant == "beta1":
        return cfg if cfg.beta > 0 else replace(cfg, beta=1.0)
    raise ValueError(f"unknown solver variant {variant!r}")


def _columns(mask, m: int) -> np.ndarray:
    """Track indices of the first ``m`` (valid) columns selected by ``mask``."""
    return np.flatnonzero(np.asarray(mask, dtype=bool)[:m])


def score_reconstruction(
    scene: GroundTruthScene,
    recon: ProjectiveReconstruction | None,
    recon_cols,
    eval_mask=None,
    K_est=None,
    n_inf=None,
    alignment: str = "homography",
) -> ReconstructionReport:
    """2D, 3D and focal errors of a pixel-frame reconstruction of ``scene``.

    ``recon_cols`` lists the scene tracks that the reconstruction's points
    belong to, in order. Errors are evaluated on those tracks that are also
    selected by ``eval_mask`` (default: the true inliers). The 2D error is
    measured against the noise-free image points. Similarity alignment first
    upgrades the reconstruction with ``(K_est, n_inf)``.
    """
    m = scene.tracks.shape[1]
    eval_mask = scene.inlier_mask_true if eval_mask is None else np.asarray(eval_mask, bool)
    recon_cols = np.asarray(recon_cols, dtype=int)
    e2 = e3 = None
    if recon is not None:
        keep = eval_mask[recon_cols]
        cols = recon_cols[keep]
        if len(cols):
            sub = ProjectiveReconstruction(recon.cameras, recon.points[:, keep])
            mask = np.zeros(m, bool)
            mask[cols] = True
            tracks = scene.clean_tracks if scene.clean_tracks is not None else scene.tracks
            try:
                e2 = error_2d(sub, tracks, mask)
            except GeometryError as exc:
                logger.info("2D error skipped: %s", exc)
            pts = sub.points
            if alignment == "similarity":
                if K_est is None or n_inf is None:
                    raise ValueError("similarity alignment needs K_est and n_inf")
                pts = metric_upgrade(sub, K_est, n_inf).points
            try:
                e3 = error_3d(pts, scene.points_metric[:, cols], np.ones(len(cols), bool), alignment)
            except (GeometryError, np.linalg.LinAlgError) as exc:
                logger.info("3D error skipped: %s", exc)
    fe = None if K_est is None else focal_error(K_est, scene.K_true)
    return ReconstructionReport(e2, e3, fe, alignment)


def run_variant(variant: str, scene: GroundTruthScene, M: MeasurementMatrix, cfg: SolverConfig | None = None,
                alignment: str = "homography") -> dict:
    """Metrics of one variant on one problem, as a flat dict (``None`` where undefined)."""
    cfg = SolverConfig() if cfg is None else cfg
    m = scene.tracks.shape[1]
    truth = scene.inlier_mask_true
    if variant == "baseline":
        recon = baseline_factorization(M)
        pred = np.ones(m, bool)
        rep = score_reconstruction(scene, recon, np.arange(m), alignment="homography")
        extra = {"n_inliers": m, "degenerate": False}
    else:
        result = solve(M, variant_config(variant, cfg))
        pred = np.asarray(result.inlier_mask[M.col_valid], bool)
        cal = result.calibration
        rep = score_reconstruction(
            scene,
            result.reconstruction,
            _columns(pred, m),
            K_est=cal.K if cal.frame == "pixel" else None,
            n_inf=result.n_inf_reconstruction,
            alignment=alignment if result.n_inf_reconstruction is not None else "homography",
        )
        extra = {"n_inliers": int(pred.sum()), "degenerate": bool(result.diagnostics["degenerate"])}
    cls = f1_score(pred, truth)
    out = {"f1": cls.f1, "precision": cls.precision, "recall": cls.recall}
    out.update({k: v for k, v in rep.to_dict().items() if k != "alignment_used"})
    if variant == "baseline":
        out["focal_error_rel"] = None
    out.update(extra)
    return out


def run_trial(scene_cfg: SceneConfig, variants=VARIANTS, cfg: SolverConfig | None = None) -> dict:
    """``{variant: metrics}`` for one synthetic problem; all variants see the same data."""
    scene, M = make_problem(scene_cfg)
    return {v: run_variant(v, scene, M, cfg) for v in variants}
