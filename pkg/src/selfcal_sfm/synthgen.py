"""Synthetic multi-view scenes with exchanged-correspondence outliers and noise.

Randomness comes from numpy's PCG64 generator. Every purpose draws from its
own stream derived from ``SeedSequence([seed, stream_id])`` so that, e.g.,
changing the noise level never changes the scene geometry.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ConfigError, DimensionError, GeometryError
from .factorization import (
    MeasurementMatrix,
    build_measurement_matrix,
    normalize_first_camera,
    sturm_triggs_factorize,
)
from .geometry import ProjectiveReconstruction, fit_point_homography, rotation_xyz
from .selfcalib import plane_at_infinity_from_homography

STREAM_SCENE = 0
STREAM_OUTLIERS = 1
STREAM_NOISE = 2

ROTATION_RANGE = 0.4
TRANSLATION_RANGE = 1.0
POINT_XY_RANGE = 1.0
POINT_Z_RANGE = (2.0, 4.0)
MIN_DEPTH = 0.1
MAX_RETRIES = 100

DEFAULT_K = np.array([[800.0, 0.0, 320.0], [0.0, 800.0, 240.0], [0.0, 0.0, 1.0]])
DEFAULT_IMAGE_SIZE = (640, 480)


def rng_for(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream)])))


def image_normalization(image_size, focal_prior: float = 1.2) -> np.ndarray:
    """Pixel-to-working-frame map: centre the image and divide by the focal prior.

    The prior focal length is ``focal_prior * max(width, height)``, so the
    default intrinsics guess becomes the identity in the working frame.
    """
    w, h = image_size
    f = focal_prior * max(w, h)
    return np.array([[1.0 / f, 0.0, -0.5 * w / f], [0.0, 1.0 / f, -0.5 * h / f], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class SceneConfig:
    n_views: int = 10
    m_points: int = 200
    outlier_rate: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0
    pad_rows: int | None = None
    pad_cols: int | None = None
    K_true: np.ndarray = field(default_factory=lambda: DEFAULT_K.copy())
    image_size: tuple = DEFAULT_IMAGE_SIZE

    def __post_init__(self):
        if self.n_views < 2:
            raise ConfigError(f"n_views must be >= 2, got {self.n_views}")
        if self.m_points < 8:
            raise ConfigError(f"m_points must be >= 8, got {self.m_points}")
        if not 0.0 <= self.outlier_rate < 1.0:
            raise ConfigError(f"outlier_rate must lie in [0, 1), got {self.outlier_rate}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be nonnegative, got {self.noise_sigma}")
        if self.n_outliers + 8 > self.m_points:
            raise ConfigError(
                f"outlier_rate {self.outlier_rate} leaves fewer than 8 inliers among {self.m_points} points"
            )
        if self.n_outliers == 1:
            raise ConfigError("a single outlier cannot be exchanged; use 0 or at least 2")
        if self.pad_rows is not None and self.pad_rows < 3 * self.n_views:
            raise ConfigError("pad_rows is smaller than 3 * n_views")
        if self.pad_cols is not None and self.pad_cols < self.m_points:
            raise ConfigError("pad_cols is smaller than m_points")
        object.__setattr__(self, "K_true", np.asarray(self.K_true, dtype=float))
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))

    @property
    def n_outliers(self) -> int:
        return int(np.floor(self.outlier_rate * self.m_points + 1e-9))

    def to_dict(self) -> dict:
        return {
            "n_views": self.n_views,
            "m_points": self.m_points,
            "outlier_rate": self.outlier_rate,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
            "pad_rows": self.pad_rows,
            "pad_cols": self.pad_cols,
            "K_true": self.K_true.tolist(),
            "image_size": list(self.image_size),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


@dataclass(frozen=True)
class GroundTruthScene:
    """Metric scene plus everything needed to score a reconstruction."""

    config: SceneConfig
    points_metric: np.ndarray  # (4, m), world frame
    cameras_metric: np.ndarray  # (n, 3, 4) = K [R | t]
    depths_true: np.ndarray  # (n, m), attached to each observation
    inlier_mask_true: np.ndarray  # (m,)
    tracks: np.ndarray  # (n, m, 3) pixel coordinates, third entry 1
    K_true: np.ndarray
    n_inf_true: np.ndarray  # plane at infinity of the canonical projective frame
    clean_tracks: np.ndarray = None

    @property
    def image_transform(self) -> np.ndarray:
        return image_normalization(self.config.image_size)

    @property
    def K_working(self) -> np.ndarray:
        """True intrinsics expressed in the normalized working frame."""
        return self.image_transform @ self.K_true

    def points_first_camera_frame(self) -> np.ndarray:
        """Metric points in the coordinate frame of the first camera, ``(4, m)``."""
        Rt = np.linalg.inv(self.K_true) @ self.cameras_metric[0]
        T = np.vstack([Rt, [0, 0, 0, 1.0]])
        return T @ self.points_metric

    def measurement_matrix(self) -> MeasurementMatrix:
        return build_measurement_matrix(self.tracks, self.depths_true, self.image_transform)


def _random_pose(rng):
    angles = rng.uniform(-ROTATION_RANGE, ROTATION_RANGE, size=3)
    t = rng.uniform(-TRANSLATION_RANGE, TRANSLATION_RANGE, size=3)
    return rotation_xyz(*angles), t


def _sample_point(rng):
    xy = rng.uniform(-POINT_XY_RANGE, POINT_XY_RANGE, size=2)
    z = rng.uniform(*POINT_Z_RANGE)
    return np.array([xy[0], xy[1], z, 1.0])


def generate_scene(cfg: SceneConfig) -> GroundTruthScene:
    """Random cameras and points observed without outliers or noise."""
    rng = rng_for(cfg.seed, STREAM_SCENE)
    K = cfg.K_true
    poses = [_random_pose(rng) for _ in range(cfg.n_views)]
    Rts = np.stack([np.hstack([R, t[:, None]]) for R, t in poses])
    points = np.empty((4, cfg.m_points))
    for j in range(cfg.m_points):
        for _ in range(MAX_RETRIES):
            X = _sample_point(rng)
            if np.all((Rts @ X)[:, 2] > MIN_DEPTH):
                break
        else:
            raise GeometryError(f"could not place point {j} in front of every camera")
        points[:, j] = X
    cams = K @ Rts
    proj = cams @ points  # (n, 3, m)
    depths = (Rts @ points)[:, 2, :]
    tracks = (proj / proj[:, 2:3, :]).transpose(0, 2, 1)
    scene = GroundTruthScene(
        config=cfg,
        points_metric=points,
        cameras_metric=cams,
        depths_true=depths,
        inlier_mask_true=np.ones(cfg.m_points, bool),
        tracks=tracks,
        K_true=K.copy(),
        n_inf_true=np.zeros(3),
        clean_tracks=tracks.copy(),
    )
    return replace(scene, n_inf_true=true_plane_at_infinity(canonical_reconstruction(scene), scene))


def canonical_reconstruction(scene: GroundTruthScene) -> ProjectiveReconstruction:
    """First-camera-normalised factorization of the clean true-depth matrix of the inliers."""
    keep = np.flatnonzero(scene.inlier_mask_true)
    tracks = scene.clean_tracks if scene.clean_tracks is not None else scene.tracks
    lam = _clean_depths(scene)
    M = build_measurement_matrix(tracks[:, keep], lam[:, keep], scene.image_transform)
    return normalize_first_camera(sturm_triggs_factorize(M))


def _clean_depths(scene: GroundTruthScene) -> np.ndarray:
    Rt = np.linalg.inv(scene.K_true) @ scene.cameras_metric
    return (Rt @ scene.points_metric)[:, 2, :]


def true_plane_at_infinity(recon: ProjectiveReconstruction, scene: GroundTruthScene, columns=None) -> np.ndarray:
    """``n_inf`` of a first-camera-normalised reconstruction, found by aligning it to the truth.

    ``columns`` names the scene tracks that the reconstruction's points
    correspond to (default: the true inliers).
    """
    if columns is None:
        columns = np.flatnonzero(scene.inlier_mask_true)
    X_true = scene.points_first_camera_frame()[:, columns]
    H = fit_point_homography(recon.points, X_true)
    return plane_at_infinity_from_homography(H)


def _exchange_groups(selected: np.ndarray) -> list:
    """Pairs of consecutive tracks; an odd leftover joins the last pair as a 3-cycle."""
    groups = [list(selected[i : i + 2]) for i in range(0, len(selected) - 1, 2)]
    if len(selected) % 2:
        groups[-1].append(selected[-1])
    return groups


def inject_outliers(scene: GroundTruthScene, cfg: SceneConfig | None = None) -> GroundTruthScene:
    """Exchange observations among ``floor(delta * m)`` randomly selected tracks.

    Selected tracks are grouped in pairs (one 3-cycle when the count is
    odd). Every group keeps one anchor view untouched and cyclically
    exchanges its observations in a random non-empty subset of the remaining
    views that contains at least one view other than the first. Depths
    travel with their observations.
    """
    cfg = scene.config if cfg is None else cfg
    k = cfg.n_outliers
    n, m = scene.depths_true.shape
    if k == 0:
        return scene
    rng = rng_for(cfg.seed, STREAM_OUTLIERS)
    selected = rng.choice(m, size=k, replace=False)
    tracks = scene.tracks.copy()
    depths = scene.depths_true.copy()
    for group in _exchange_groups(selected):
        anchor = rng.integers(n)
        others = np.array([i for i in range(n) if i != anchor])
        while True:
            views = others[rng.random(len(others)) < 0.5]
            if np.any(views != 0):
                break
        src = np.roll(np.array(group), 1)
        for i in views:
            tracks[i, group] = scene.tracks[i, src]
            depths[i, group] = scene.depths_true[i, src]
    mask = np.ones(m, bool)
    mask[selected] = False
    return replace(scene, tracks=tracks, depths_true=depths, inlier_mask_true=mask)


def add_noise(M: MeasurementMatrix, sigma: float, seed: int) -> MeasurementMatrix:
    """Gaussian noise of std ``sigma * RMS(valid entries)`` on every valid entry."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return M
    B = M.valid_block()
    rms = np.sqrt(np.mean(B**2))
    noise = rng_for(seed, STREAM_NOISE).normal(0.0, sigma * rms, size=B.shape)
    return M.with_valid_block(B + noise)


def pad_matrix(M: MeasurementMatrix, rows: int, cols: int) -> MeasurementMatrix:
    """Embed the valid block in the top-left corner of a ``rows x cols`` zero matrix."""
    B = M.valid_block()
    if rows % 3 or rows < B.shape[0] or cols < B.shape[1]:
        raise DimensionError(f"cannot pad a {B.shape} block to {rows}x{cols}")
    E = np.zeros((rows, cols))
    E[: B.shape[0], : B.shape[1]] = B
    rv = np.zeros(rows // 3, bool)
    rv[: B.shape[0] // 3] = True
    cv = np.zeros(cols, bool)
    cv[: B.shape[1]] = True
    return MeasurementMatrix(E, rv, cv, M.image_transform)


def make_problem(cfg: SceneConfig):
    """Scene with outliers plus its (noisy, optionally padded) measurement matrix."""
    scene = inject_outliers(generate_scene(cfg), cfg)
    M = add_noise(scene.measurement_matrix(), cfg.noise_sigma, cfg.seed)
    if cfg.pad_rows is not None or cfg.pad_cols is not None:
        rows = cfg.pad_rows if cfg.pad_rows is not None else M.shape[0]
        cols = cfg.pad_cols if cfg.pad_cols is not None else M.shape[1]
        M = pad_matrix(M, rows, cols)
    return scene, M
