"""File formats: track CSVs, measurement matrices, scene bundles and solve results.

Track files have the header ``view,track,x,y`` with an optional fifth
column ``w`` (homogeneous weight, default 1), one row per observation.
Matrices are written as plain CSV with full float precision; a
measurement matrix gets a JSON sidecar holding its shape, validity masks
and image transform.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DimensionError
from .factorization import MeasurementMatrix
from .selfcalib import CalibrationEstimate
from .synthgen import GroundTruthScene, SceneConfig

FLOAT_FMT = "%.17g"
TRACE_HEADER = ("iteration", "loss_num", "loss_proj", "loss_daq", "total", "best")


class FormatError(ValueError):
    """A file does not follow the expected layout; the message names the field or line."""


def _write_matrix(path, A) -> None:
    np.savetxt(path, np.atleast_2d(np.asarray(A, dtype=float)), delimiter=",", fmt=FLOAT_FMT)


def _read_matrix(path) -> np.ndarray:
    try:
        return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float, ndmin=2))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


# --- tracks ---------------------------------------------------------------


def write_tracks(path, tracks) -> None:
    """Write an ``(n, m, 3)`` track array, dehomogenized, one row per observation."""
    x = np.asarray(tracks, dtype=float)
    if x.ndim != 3 or x.shape[2] != 3:
        raise DimensionError(f"tracks must be (n, m, 3), got {x.shape}")
    xy = x[:, :, :2] / x[:, :, 2:3]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["view", "track", "x", "y"])
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                w.writerow([i, j, repr(float(xy[i, j, 0])), repr(float(xy[i, j, 1]))])


def read_tracks(path) -> np.ndarray:
    """Read a track CSV into an ``(n, m, 3)`` array; every (view, track) pair must appear once."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: empty track file") from None
        if header[:4] != ["view", "track", "x", "y"] or header[4:] not in ([], ["w"]):
            raise FormatError(f"{path}:1: header must be view,track,x,y[,w], got {','.join(header)}")
        rows = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                i, j = int(row[0]), int(row[1])
                vals = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            if i < 0 or j < 0:
                raise FormatError(f"{path}:{lineno}: negative index")
            if (i, j) in rows:
                raise FormatError(f"{path}:{lineno}: duplicate observation view {i} track {j}")
            rows[(i, j)] = vals + [1.0] * (3 - len(vals))
    if not rows:
        raise FormatError(f"{path}: no observations")
    n = 1 + max(i for i, _ in rows)
    m = 1 + max(j for _, j in rows)
    if len(rows) != n * m:
        raise FormatError(f"{path}: {len(rows)} observations for {n} views and {m} tracks; every track must be seen in every view")
    out = np.empty((n, m, 3))
    for (i, j), v in rows.items():
        out[i, j] = v
    return out


# --- measurement matrices -------------------------------------------------


def _sidecar(path) -> Path:
    return Path(path).with_suffix(".json")


def save_measurement(path, M: MeasurementMatrix) -> None:
    _write_matrix(path, M.entries)
    meta = {
        "n": int(M.shape[0] // 3),
        "m": int(M.shape[1]),
        "row_valid": M.row_valid.astype(int).tolist(),
        "col_valid": M.col_valid.astype(int).tolist(),
        "image_transform": M.image_transform.tolist(),
    }
    _sidecar(path).write_text(json.dumps(meta, indent=1))


def load_measurement(path) -> MeasurementMatrix:
    E = _read_matrix(path)
    side = _sidecar(path)
    if not side.exists():
        return MeasurementMatrix(E)
    meta = _load_json(side)
    for key in ("n", "m", "row_valid", "col_valid"):
        if key not in meta:
            raise FormatError(f"{side}: missing field {key!r}")
    if E.shape != (3 * meta["n"], meta["m"]):
        raise FormatError(f"{side}: shape {E.shape} does not match n={meta['n']}, m={meta['m']}")
    return MeasurementMatrix(E, meta["row_valid"], meta["col_valid"], meta.get("image_transform", np.eye(3)))


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


# --- calibration ----------------------------------------------------------


def save_calibration(path, cal: CalibrationEstimate) -> None:
    Path(path).write_text(cal.to_json())


def load_calibration(path) -> CalibrationEstimate:
    try:
        return CalibrationEstimate.from_dict(_load_json(path))
    except (ValueError, TypeError) as exc:
        raise FormatError(f"{path}: {exc}") from exc


# --- scene bundles --------------------------------------------------------

SCENE_FILES = {
    "points_metric": "points_metric.csv",
    "cameras_metric": "cameras_metric.csv",
    "depths_true": "depths_true.csv",
    "inlier_mask_true": "inlier_mask.csv",
    "clean_tracks": "clean_tracks.csv",
    "tracks": "tracks.csv",
    "measurement": "measurement.csv",
}


def save_scene_bundle(directory, scene: GroundTruthScene, M: MeasurementMatrix | None = None) -> Path:
    """Write ``scene.json`` plus CSV matrices into ``directory`` (created if needed)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    n = scene.cameras_metric.shape[0]
    _write_matrix(d / SCENE_FILES["points_metric"], scene.points_metric)
    _write_matrix(d / SCENE_FILES["cameras_metric"], scene.cameras_metric.reshape(3 * n, 4))
    _write_matrix(d / SCENE_FILES["depths_true"], scene.depths_true)
    _write_matrix(d / SCENE_FILES["inlier_mask_true"], scene.inlier_mask_true.astype(int)[None])
    write_tracks(d / SCENE_FILES["tracks"], scene.tracks)
    if scene.clean_tracks is not None:
        write_tracks(d / SCENE_FILES["clean_tracks"], scene.clean_tracks)
    if M is not None:
        save_measurement(d / SCENE_FILES["measurement"], M)
    meta = {
        "config": scene.config.to_dict(),
        "K_true": scene.K_true.tolist(),
        "n_inf_true": scene.n_inf_true.tolist(),
        "n_inliers": int(scene.inlier_mask_true.sum()),
        "files": {k: v for k, v in SCENE_FILES.items() if (d / v).exists()},
    }
    (d / "scene.json").write_text(json.dumps(meta, indent=1))
    return d


def load_scene_bundle(directory):
    """Return ``(scene, M)``; ``M`` is ``None`` when the bundle holds no measurement matrix."""
    d = Path(directory)
    meta_path = d / "scene.json"
    if not meta_path.exists():
        raise FormatError(f"{d}: not a scene bundle (scene.json missing)")
    meta = _load_json(meta_path)
    for key in ("config", "K_true", "n_inf_true"):
        if key not in meta:
            raise FormatError(f"{meta_path}: missing field {key!r}")
    try:
        cfg = SceneConfig.from_dict(meta["config"])
    except (ConfigError, TypeError) as exc:
        raise FormatError(f"{meta_path}: config: {exc}") from exc
    tracks = read_tracks(d / SCENE_FILES["tracks"])
    n = tracks.shape[0]
    clean = d / SCENE_FILES["clean_tracks"]
    scene = GroundTruthScene(
        config=cfg,
        points_metric=_read_matrix(d / SCENE_FILES["points_metric"]),
        cameras_metric=_read_matrix(d / SCENE_FILES["cameras_metric"]).reshape(n, 3, 4),
        depths_true=_read_matrix(d / SCENE_FILES["depths_true"]),
        inlier_mask_true=_read_matrix(d / SCENE_FILES["inlier_mask_true"])[0].astype(bool),
        tracks=tracks,
        K_true=np.asarray(meta["K_true"], dtype=float),
        n_inf_true=np.asarray(meta["n_inf_true"], dtype=float),
        clean_tracks=read_tracks(clean) if clean.exists() else None,
    )
    mpath = d / SCENE_FILES["measurement"]
    return scene, (load_measurement(mpath) if mpath.exists() else None)


# --- solve results --------------------------------------------------------


def save_result(path, result) -> None:
    Path(path).write_text(result.to_json())


def write_loss_trace(path, trace) -> None:
    trace = np.asarray(trace, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for row in trace:
            w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


def read_loss_trace(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TRACE_HEADER:
            raise FormatError(f"{path}:1: header must be {','.join(TRACE_HEADER)}")
        return np.array([[float(v) for v in row] for row in reader if row]).reshape(-1, len(TRACE_HEADER))


def load_result(path) -> dict:
    """Parse a result JSON into arrays, naming the first malformed field."""
    raw = _load_json(path)
    if not isinstance(raw, dict):
        raise FormatError(f"{path}: top level must be an object")

    def need(key):
        if key not in raw:
            raise FormatError(f"{path}: missing field {key!r}")
        return raw[key]

    out = {}
    try:
        out["soft_weights"] = np.asarray(need("soft_weights"), dtype=float)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: field 'soft_weights': {exc}") from exc
    try:
        out["inlier_mask"] = np.asarray(need("inlier_mask"), dtype=int).astype(bool)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: field 'inlier_mask': {exc}") from exc
    if out["soft_weights"].ndim != 1 or out["inlier_mask"].shape != out["soft_weights"].shape:
        raise FormatError(f"{path}: field 'inlier_mask' does not match 'soft_weights'")
    try:
        out["calibration"] = CalibrationEstimate.from_dict(need("calibration"))
    except (TypeError, ValueError, AttributeError) as exc:
        raise FormatError(f"{path}: field 'calibration': {exc}") from exc
    recon = raw.get("reconstruction")
    if recon is not None:
        try:
            cams = np.asarray(recon["cameras"], dtype=float)
            pts = np.asarray(recon["points"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: field 'reconstruction': {exc}") from exc
        if cams.ndim != 3 or cams.shape[1:] != (3, 4) or pts.ndim != 2 or pts.shape[0] != 4:
            raise FormatError(f"{path}: field 'reconstruction' has malformed arrays")
        out["reconstruction"] = (cams, pts)
    else:
        out["reconstruction"] = None
    nr = raw.get("n_inf_reconstruction")
    out["n_inf_reconstruction"] = None if nr is None else np.asarray(nr, dtype=float)
    diag = raw.get("diagnostics", {})
    if not isinstance(diag, dict):
        raise FormatError(f"{path}: field 'diagnostics' must be an object")
    out["diagnostics"] = diag
    return out
