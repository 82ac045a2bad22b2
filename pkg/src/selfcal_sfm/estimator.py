"""scikit-learn style wrapper around the robust self-calibrating solver.

The estimator works on one measurement matrix at a time: ``X`` is the
``(3n, m)`` matrix (or a :class:`MeasurementMatrix`), each column is one
track, and ``predict`` labels tracks as inliers.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .evalkit import f1_score
from .exceptions import DimensionError
from .factorization import MeasurementMatrix, rank4_project
from .solver import SolverConfig, solve


def check_measurement_matrix(X) -> MeasurementMatrix:
    """Validate ``X`` and wrap plain arrays as a fully valid measurement matrix."""
    if isinstance(X, MeasurementMatrix):
        B = X.valid_block()
        check_array(B, ensure_min_samples=6, ensure_min_features=8)
        return X
    A = check_array(X, dtype=float, ensure_min_samples=6, ensure_min_features=8)
    if A.shape[0] % 3:
        raise DimensionError(f"measurement matrix needs 3n rows, got {A.shape[0]}")
    return MeasurementMatrix(A)


def check_track_mask(mask, m: int) -> np.ndarray:
    """A boolean vector with one entry per track."""
    mask = np.asarray(mask)
    if mask.shape != (m,):
        raise DimensionError(f"mask must have shape ({m},), got {mask.shape}")
    return mask.astype(bool)


class SelfCalibratingSfM(TransformerMixin, BaseEstimator):
    """Inlier classification plus self-calibration for a measurement matrix.

    Constructor arguments mirror :class:`~selfcal_sfm.solver.SolverConfig`.
    After ``fit`` the estimator exposes ``soft_weights_``, ``inlier_mask_``,
    ``calibration_``, ``reconstruction_`` and the full ``result_``.
    """

    def __init__(
        self,
        alpha=1.0,
        beta=1.0,
        t=15.0,
        t_mode="count",
        learning_rate=None,
        max_iters=2000,
        inlier_threshold=0.5,
        parameterization="direct",
        seed=0,
        proj_loss_variant="tail_sum",
        daq_start=0.25,
        daq_warmup=0.25,
        calibration_lr_scale=1.0,
    ):
        self.alpha = alpha
        self.beta = beta
        self.t = t
        self.t_mode = t_mode
        self.learning_rate = learning_rate
        self.max_iters = max_iters
        self.inlier_threshold = inlier_threshold
        self.parameterization = parameterization
        self.seed = seed
        self.proj_loss_variant = proj_loss_variant
        self.daq_start = daq_start
        self.daq_warmup = daq_warmup
        self.calibration_lr_scale = calibration_lr_scale

    def solver_config(self) -> SolverConfig:
        return SolverConfig(**self.get_params())

    def fit(self, X, y=None):
        M = check_measurement_matrix(X)
        self.result_ = solve(M, self.solver_config())
        self.soft_weights_ = self.result_.soft_weights
        self.inlier_mask_ = self.result_.inlier_mask
        self.calibration_ = self.result_.calibration
        self.reconstruction_ = self.result_.reconstruction
        self.n_features_in_ = M.shape[1]
        self._fit_shape = M.shape
        return self

    def _check_same(self, X) -> MeasurementMatrix:
        check_is_fitted(self, "result_")
        M = check_measurement_matrix(X)
        if M.shape != self._fit_shape:
            raise DimensionError(
                f"estimator was fitted on a {self._fit_shape} matrix; got {M.shape}. "
                "Fitting is per instance, call fit on the new matrix."
            )
        return M

    def predict(self, X):
        """Inlier mask of the fitted matrix (one boolean per column)."""
        self._check_same(X)
        return self.inlier_mask_.copy()

    def transform(self, X):
        """Rank-4 projection of the inlier columns, as a ``(3n, k)`` array."""
        M = self._check_same(X)
        keep = self.inlier_mask_[M.col_valid]
        if keep.sum() < 4:
            raise DimensionError("fewer than 4 inliers; nothing to project")
        return rank4_project(M.select_columns(np.flatnonzero(keep))).valid_block()

    def score(self, X, y):
        """F1 of the predicted inlier mask against the true mask ``y``."""
        pred = self.predict(X)
        return f1_score(pred, check_track_mask(y, len(pred))).f1
