import json

import numpy as np
import pytest

from selfcal_sfm.factorization import MeasurementMatrix
from selfcal_sfm.io import (
    FormatError,
    load_calibration,
    load_measurement,
    load_result,
    load_scene_bundle,
    read_loss_trace,
    read_tracks,
    save_calibration,
    save_measurement,
    save_result,
    save_scene_bundle,
    write_loss_trace,
    write_tracks,
)
from selfcal_sfm.selfcalib import CalibrationEstimate
from selfcal_sfm.solver import SolverConfig, solve
from selfcal_sfm.synthgen import SceneConfig, make_problem


def test_tracks_round_trip(tmp_path, rng):
    x = np.concatenate([rng.normal(size=(3, 5, 2)), np.ones((3, 5, 1))], axis=2)
    write_tracks(tmp_path / "t.csv", x)
    np.testing.assert_array_equal(read_tracks(tmp_path / "t.csv"), x)


def test_tracks_weight_column(tmp_path):
    (tmp_path / "t.csv").write_text("view,track,x,y,w\n0,0,2,4,2\n1,0,1,1,1\n")
    x = read_tracks(tmp_path / "t.csv")
    assert x.shape == (2, 1, 3)
    np.testing.assert_array_equal(x[0, 0], [2, 4, 2])


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("", "empty"),
        ("a,b,c,d\n", ":1:"),
        ("view,track,x,y\n0,0,1\n", ":2:"),
        ("view,track,x,y\n0,0,1,zz\n", ":2:"),
        ("view,track,x,y\n0,0,1,1\n0,0,1,1\n", "duplicate"),
        ("view,track,x,y\n0,0,1,1\n1,1,1,1\n", "every track"),
        ("view,track,x,y\n", "no observations"),
    ],
)
def test_tracks_malformed(tmp_path, text, fragment):
    (tmp_path / "t.csv").write_text(text)
    with pytest.raises(FormatError, match=fragment):
        read_tracks(tmp_path / "t.csv")


def test_measurement_round_trip(tmp_path, rng):
    M = MeasurementMatrix(rng.normal(size=(9, 7)), [1, 1, 0], [1] * 6 + [0], np.diag([2.0, 2.0, 1.0]))
    save_measurement(tmp_path / "M.csv", M)
    back = load_measurement(tmp_path / "M.csv")
    np.testing.assert_array_equal(back.entries, M.entries)
    np.testing.assert_array_equal(back.row_valid, M.row_valid)
    np.testing.assert_array_equal(back.image_transform, M.image_transform)


def test_measurement_sidecar_mismatch(tmp_path, rng):
    save_measurement(tmp_path / "M.csv", MeasurementMatrix(rng.normal(size=(6, 5))))
    meta = json.loads((tmp_path / "M.json").read_text())
    meta["m"] = 9
    (tmp_path / "M.json").write_text(json.dumps(meta))
    with pytest.raises(FormatError, match="shape"):
        load_measurement(tmp_path / "M.csv")


def test_calibration_round_trip(tmp_path):
    cal = CalibrationEstimate(np.array([[800.0, 0, 320], [0, 790, 240], [0, 0, 1]]), [0.1, 0.2, 0.3])
    save_calibration(tmp_path / "c.json", cal)
    np.testing.assert_array_equal(load_calibration(tmp_path / "c.json").K, cal.K)
    (tmp_path / "bad.json").write_text('{"K": [[1, 0, 0]]}')
    with pytest.raises(FormatError):
        load_calibration(tmp_path / "bad.json")


def test_scene_bundle_round_trip(tmp_path):
    scene, M = make_problem(SceneConfig(n_views=3, m_points=12, outlier_rate=0.25, seed=1))
    save_scene_bundle(tmp_path / "b", scene, M)
    s2, M2 = load_scene_bundle(tmp_path / "b")
    np.testing.assert_array_equal(s2.tracks, scene.tracks)
    np.testing.assert_array_equal(s2.inlier_mask_true, scene.inlier_mask_true)
    np.testing.assert_array_equal(s2.cameras_metric, scene.cameras_metric)
    np.testing.assert_array_equal(M2.entries, M.entries)
    assert s2.config.to_dict() == scene.config.to_dict()


def test_scene_bundle_missing(tmp_path):
    with pytest.raises(FormatError, match="scene.json"):
        load_scene_bundle(tmp_path)


def test_loss_trace_round_trip(tmp_path, rng):
    trace = np.column_stack([np.arange(4), rng.normal(size=(4, 5))])
    write_loss_trace(tmp_path / "l.csv", trace)
    np.testing.assert_array_equal(read_loss_trace(tmp_path / "l.csv"), trace)


def test_result_round_trip(tmp_path):
    _, M = make_problem(SceneConfig(n_views=3, m_points=12, seed=2))
    res = solve(M, SolverConfig(max_iters=20))
    save_result(tmp_path / "r.json", res)
    back = load_result(tmp_path / "r.json")
    np.testing.assert_array_equal(back["inlier_mask"], res.inlier_mask)
    np.testing.assert_array_equal(back["soft_weights"], res.soft_weights)


@pytest.mark.parametrize(
    "patch, field",
    [
        ({"soft_weights": "abc"}, "soft_weights"),
        ({"inlier_mask": [1]}, "inlier_mask"),
        ({"calibration": {"K": 3}}, "calibration"),
        ({"reconstruction": {"cameras": [1]}}, "reconstruction"),
    ],
)
def test_result_malformed_field(tmp_path, patch, field):
    base = {"soft_weights": [0.9, 0.1], "inlier_mask": [1, 0],
            "calibration": {"K": np.eye(3).tolist(), "n_inf": [0, 0, 0]}}
    base.update(patch)
    (tmp_path / "r.json").write_text(json.dumps(base))
    with pytest.raises(FormatError, match=field):
        load_result(tmp_path / "r.json")


def test_result_bad_json(tmp_path):
    (tmp_path / "r.json").write_text("{\n\n  oops")
    with pytest.raises(FormatError, match=r"r\.json:3"):
        load_result(tmp_path / "r.json")
