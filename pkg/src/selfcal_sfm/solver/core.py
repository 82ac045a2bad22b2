"""Per-instance minimisation of the robust self-calibrating loss.

The total loss is ``L_num + alpha * L_proj + beta * L_DAQ`` over the
per-correspondence weights, the shared intrinsics and the plane at
infinity. Gradients of the first two terms are analytic; the DAQ term is
differentiated analytically with respect to the weights (or by finite
differences, see ``SolverConfig.daq_weight_grad``) and by central finite
differences with respect to the calibration parameters.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import DimensionError, GeometryError
from ..factorization import MeasurementMatrix, normalize_first_camera, rank4_project, sturm_triggs_factorize
from ..geometry import ProjectiveReconstruction, apply_homography, fit_point_homography, intrinsics_matrix
from ..linalg import signed_svd
from ..selfcalib import CalibrationEstimate, daq_residual_batch
from .adam import Adam
from .config import SolverConfig
from .encoder import PointSetEncoder
from .losses import (
    DAQ_FAILURE_LOSS,
    _proj_indices,
    _split_root,
    _sv_grad_from_svd,
    daq_weight_gradient,
    grad_loss_num,
    loss_daq,
    loss_num,
    sigmoid,
    threshold_for_count,
    weighted_cameras,
)

logger = logging.getLogger(__name__)

MIN_INLIERS = 8
TRACE_COLUMNS = ("iteration", "loss_num", "loss_proj", "loss_daq", "total", "best")


@dataclass
class SolverState:
    """Mutable optimisation state of one solver instance."""

    params: dict
    optimizer: Adam
    encoder: PointSetEncoder | None = None
    iteration: int = 0
    loss_trace: list = field(default_factory=list)
    daq_failures: int = 0

    @property
    def weight_logits(self) -> np.ndarray:
        if self.encoder is None:
            return self.params["logits"]
        return self.encoder.forward(self._block)[0]

    @property
    def K_params(self) -> np.ndarray:
        return self.params["K"]

    @property
    def n_inf_params(self) -> np.ndarray:
        if self.encoder is None:
            return self.params["n_inf"]
        return self.encoder.forward(self._block)[1]

    @property
    def first_moment(self) -> dict:
        return self.optimizer.m

    @property
    def second_moment(self) -> dict:
        return self.optimizer.v

    _block: np.ndarray = None


def init_state(B: np.ndarray, cfg: SolverConfig) -> SolverState:
    """Logits at zero (weights 0.5), identity intrinsics in the working frame, ``n_inf = 0``."""
    m = B.shape[1]
    params = {"K": np.array([1.0, 1.0, 0.0, 0.0, 0.0])}
    encoder = None
    if cfg.parameterization == "direct":
        params["logits"] = np.zeros(m)
        params["n_inf"] = np.zeros(3)
    else:
        encoder = PointSetEncoder(B.shape[0], cfg.encoder_widths, seed=cfg.seed)
        params.update(encoder.params)
        encoder.params = params  # shared storage, updated in place by Adam
    scale = {"K": cfg.calibration_lr_scale}
    if encoder is None:
        scale["n_inf"] = cfg.calibration_lr_scale
    opt = Adam(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, lr_scale=scale)
    opt.init_moments(params)
    state = SolverState(params=params, optimizer=opt, encoder=encoder)
    state._block = B
    return state


def effective_threshold(cfg: SolverConfig, m: int) -> float:
    return threshold_for_count(cfg.t, m) if cfg.t_mode == "count" else cfg.t


def _block_of(M) -> np.ndarray:
    return M.valid_block() if isinstance(M, MeasurementMatrix) else np.asarray(M, dtype=float)


def _weights_and_plane(state: SolverState, B: np.ndarray):
    if state.encoder is None:
        return sigmoid(state.params["logits"]), state.params["n_inf"], None
    logits, n_inf, cache = state.encoder.forward(B)
    return sigmoid(logits), n_inf, cache


def loss_total(state: SolverState, M, cfg: SolverConfig):
    """Total loss and its ``(L_num, L_proj, L_DAQ)`` components."""
    B = _block_of(M)
    w, n_inf, _ = _weights_and_plane(state, B)
    if w.shape != (B.shape[1],):
        raise DimensionError("state does not match the measurement matrix")
    Ln = loss_num(w, effective_threshold(cfg, B.shape[1]))
    s = np.linalg.svd(B * w, compute_uv=False)
    Lp = float(np.sum(s[_proj_indices(cfg.proj_loss_variant, len(s))]))
    K = intrinsics_matrix(*state.params["K"])
    Ld = loss_daq(w, B, K, n_inf, cfg.daq_camera_split) if cfg.beta > 0 else 0.0
    return Ln + cfg.alpha * Lp + cfg.beta * Ld, (Ln, Lp, Ld)


def _calibration_fd_grads(P, K_params, n_inf, rel_step):
    """Central differences of the DAQ residual of fixed cameras in ``(K, n_inf)``."""
    x0 = np.concatenate([K_params, n_inf])
    grad = np.empty(8)
    for i in range(8):
        h = rel_step * max(abs(x0[i]), 1.0)
        xp, xm = x0.copy(), x0.copy()
        xp[i] += h
        xm[i] -= h
        fp = daq_residual_batch(P, intrinsics_matrix(*xp[:5]), xp[5:])
        fm = daq_residual_batch(P, intrinsics_matrix(*xm[:5]), xm[5:])
        grad[i] = (fp - fm) / (2 * h)
    return grad[:5], grad[5:]


def _daq_weight_grad_fd(B, w, K, n_inf, rel_step, split):
    g = np.empty_like(w)
    for j in range(len(w)):
        h = rel_step * max(abs(w[j]), 1.0)
        wp, wm = w.copy(), w.copy()
        wp[j] += h
        wm[j] -= h
        g[j] = (loss_daq(wp, B, K, n_inf, split) - loss_daq(wm, B, K, n_inf, split)) / (2 * h)
    return g


def daq_ramp(iteration: int, cfg: SolverConfig) -> float:
    """Fraction of the DAQ weight-gradient applied at ``iteration``."""
    start = cfg.daq_start * cfg.max_iters
    if iteration < start:
        return 0.0
    if cfg.daq_warmup == 0:
        return 1.0
    return min(1.0, (iteration - start) / (cfg.daq_warmup * cfg.max_iters))


def daq_active(iteration: int, cfg: SolverConfig) -> bool:
    return cfg.beta > 0 and iteration >= cfg.daq_start * cfg.max_iters


def grad_total(state: SolverState, M, cfg: SolverConfig):
    """Gradient of the total loss for every parameter block.

    Returns ``(grads, (L_num, L_proj, L_DAQ), daq_failed)`` where ``grads``
    has the keys of ``state.params``. Before ``daq_start`` the DAQ term
    contributes nothing, and its weight gradient is then scaled by
    :func:`daq_ramp`; with ``daq_start=0`` and ``daq_warmup=0`` the result
    is the exact gradient of the total loss.
    """
    B = _block_of(M)
    w, n_inf, cache = _weights_and_plane(state, B)
    t_eff = effective_threshold(cfg, B.shape[1])
    Ln = loss_num(w, t_eff)
    g_w = grad_loss_num(w, t_eff)

    svd = signed_svd(B * w)
    U, s, Vt = svd
    ks = _proj_indices(cfg.proj_loss_variant, len(s))
    Lp = float(np.sum(s[ks]))
    g_w = g_w + cfg.alpha * _sv_grad_from_svd(B, U, s, Vt, ks)

    gK = np.zeros(5)
    gn = np.zeros(3)
    Ld = 0.0
    failed = False
    if cfg.beta > 0:
        K = intrinsics_matrix(*state.params["K"])
        try:
            if cfg.daq_weight_grad == "analytic":
                Ld, gd = daq_weight_gradient(B, w, K, n_inf, svd, cfg.daq_camera_split)
            else:
                Ld = loss_daq(w, B, K, n_inf, cfg.daq_camera_split)
                gd = _daq_weight_grad_fd(B, w, K, n_inf, cfg.fd_rel_step, cfg.daq_camera_split)
            P, _ = weighted_cameras(B * w, svd, cfg.daq_camera_split)
            gK, gn = _calibration_fd_grads(P, state.params["K"], n_inf, cfg.fd_rel_step)
            if not (np.isfinite(Ld) and np.all(np.isfinite(gd))):
                raise GeometryError("non-finite DAQ gradient")
            g_w = g_w + cfg.beta * daq_ramp(state.iteration, cfg) * gd
            if daq_active(state.iteration, cfg):
                gK, gn = cfg.beta * gK, cfg.beta * gn
            else:
                gK, gn = np.zeros(5), np.zeros(3)
        except (GeometryError, np.linalg.LinAlgError, FloatingPointError):
            Ld, failed = DAQ_FAILURE_LOSS, True
            gK, gn = np.zeros(5), np.zeros(3)

    g_logits = g_w * w * (1.0 - w)
    grads = {"K": gK}
    if state.encoder is None:
        grads["logits"] = g_logits
        grads["n_inf"] = gn
    else:
        grads.update(state.encoder.backward(cache, g_logits, gn))
    return grads, (Ln, Lp, Ld), failed


def adam_step(state: SolverState, grads: dict, cfg: SolverConfig | None = None) -> SolverState:
    """One bias-corrected Adam update of ``state`` (in place); returns the state."""
    if cfg is not None:
        state.optimizer.lr = cfg.lr
    state.optimizer.step(state.params, grads)
    state.iteration += 1
    return state


@dataclass
class SolveResult:
    soft_weights: np.ndarray
    inlier_mask: np.ndarray
    calibration: CalibrationEstimate
    reconstruction: ProjectiveReconstruction | None
    n_inf_reconstruction: np.ndarray | None
    diagnostics: dict

    @property
    def loss_trace(self) -> np.ndarray:
        return self.diagnostics["loss_trace"]

    def to_dict(self) -> dict:
        diag = {k: v for k, v in self.diagnostics.items() if k != "loss_trace"}
        return {
            "soft_weights": self.soft_weights.tolist(),
            "inlier_mask": self.inlier_mask.astype(int).tolist(),
            "calibration": self.calibration.to_dict(),
            "n_inf_reconstruction": None
            if self.n_inf_reconstruction is None
            else self.n_inf_reconstruction.tolist(),
            "reconstruction": None
            if self.reconstruction is None
            else {
                "cameras": self.reconstruction.cameras.tolist(),
                "points": self.reconstruction.points.tolist(),
            },
            "diagnostics": diag,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def _converged(trace: np.ndarray, window: int, tol: float) -> bool:
    best = trace[:, 5]
    if len(best) <= window:
        return False
    prev, last = best[-window - 1], best[-1]
    return bool(prev - last <= tol * max(abs(prev), 1e-300))


def _transfer_plane(B, w, n_inf, inlier_cols, recon, split):
    """Re-express ``n_inf`` from the weighted factorization frame in ``recon``'s frame."""
    Bw = B * w
    U, s, Vt = signed_svd(Bw)
    root = _split_root(s, split)
    cams = (U[:, :4] * root).reshape(-1, 3, 4)
    weighted = normalize_first_camera(ProjectiveReconstruction(cams, (s[:4] / root)[:, None] * Vt[:4]))
    H = fit_point_homography(weighted.points[:, inlier_cols], recon.points)
    plane = np.linalg.solve(H.T, np.append(n_inf, 1.0))
    return plane[:3] / plane[3]


def to_pixel_frame(recon: ProjectiveReconstruction, T) -> ProjectiveReconstruction:
    """Re-express a working-frame reconstruction (first camera ``[I | 0]``) in pixels.

    Cameras become ``T^-1 P diag(T, 1)`` and points ``diag(T^-1, 1) X``, so the
    images are in pixels and the first camera stays ``[I | 0]``. A plane
    ``n`` of the working frame becomes ``T^T n``.
    """
    T = np.asarray(T, dtype=float)
    H = np.eye(4)
    H[:3, :3] = np.linalg.inv(T)
    moved = apply_homography(H, recon)
    return ProjectiveReconstruction(np.linalg.inv(T) @ moved.cameras, moved.points)


def solve(M: MeasurementMatrix, cfg: SolverConfig | None = None) -> SolveResult:
    """Optimise weights and calibration for one measurement matrix."""
    cfg = SolverConfig() if cfg is None else cfg
    if not isinstance(M, MeasurementMatrix):
        M = MeasurementMatrix(np.asarray(M, dtype=float))
    B_raw = M.valid_block()
    n, m = B_raw.shape[0] // 3, B_raw.shape[1]
    if n < 2 or m < MIN_INLIERS:
        raise DimensionError(f"need at least 2 views and {MIN_INLIERS} tracks, got {n} and {m}")
    scale = float(np.sqrt(np.mean(B_raw**2))) if cfg.normalize_scale else 1.0
    B = B_raw / scale

    state = init_state(B, cfg)
    trace = np.empty((cfg.max_iters, len(TRACE_COLUMNS)))
    best = np.inf
    for it in range(cfg.max_iters):
        grads, (Ln, Lp, Ld), failed = grad_total(state, B, cfg)
        state.daq_failures += int(failed)
        total = Ln + cfg.alpha * Lp + cfg.beta * Ld
        best = min(best, total)
        trace[it] = (it, Ln, Lp, Ld, total, best)
        adam_step(state, grads, cfg)
    state.loss_trace = trace

    w, n_inf, _ = _weights_and_plane(state, B)
    mask_valid = w > cfg.inlier_threshold
    inlier_cols = np.flatnonzero(mask_valid)
    too_few = len(inlier_cols) < MIN_INLIERS

    T = M.image_transform
    pixel = not np.allclose(T, np.eye(3))
    K_work = intrinsics_matrix(*state.params["K"])
    K_out = np.linalg.inv(T) @ K_work if pixel else K_work
    n_solver = T.T @ n_inf if pixel else np.array(n_inf, dtype=float)
    calibration = CalibrationEstimate(K_out / K_out[2, 2], n_solver, "pixel" if pixel else "normalized")

    recon, n_recon = None, None
    if not too_few:
        try:
            Mf = rank4_project(M.select_columns(inlier_cols))
            recon = normalize_first_camera(sturm_triggs_factorize(Mf))
            n_recon = _transfer_plane(B, w, n_inf, inlier_cols, recon, cfg.daq_camera_split)
            if pixel:
                recon = to_pixel_frame(recon, T)
                n_recon = T.T @ n_recon
        except (GeometryError, np.linalg.LinAlgError) as exc:
            logger.warning("could not factorize the inlier set: %s", exc)
            recon, n_recon = None, None

    soft = np.zeros(M.shape[1])
    soft[M.col_valid] = w
    mask = np.zeros(M.shape[1], bool)
    mask[M.col_valid] = mask_valid
    diagnostics = {
        "loss_trace": trace,
        "iterations": int(state.iteration),
        "converged": _converged(trace, cfg.convergence_window, cfg.convergence_tol),
        "too_few_inliers": bool(too_few),
        "degenerate": recon is None,
        "daq_failures": int(state.daq_failures),
        "t_effective": float(effective_threshold(cfg, m)),
        "scale": scale,
        "n_inliers": int(mask.sum()),
        "final_loss": [float(v) for v in trace[-1, 1:5]],
    }
    return SolveResult(soft, mask, calibration, recon, n_recon, diagnostics)


def baseline_factorization(M: MeasurementMatrix) -> ProjectiveReconstruction:
    """Plain projective factorization of every column: rank-4 projection then Sturm/Triggs."""
    recon = normalize_first_camera(sturm_triggs_factorize(rank4_project(M)))
    T = M.image_transform
    if not np.allclose(T, np.eye(3)):
        recon = to_pixel_frame(recon, T)
    return recon
