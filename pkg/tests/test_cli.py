import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from selfcal_sfm.cli import EXIT_DEGENERATE, EXIT_INVALID, EXIT_OK, main
from selfcal_sfm.io import load_scene_bundle, write_tracks

FAST = ["--max-iters", "150"]


@pytest.fixture
def outdir(tmp_path, monkeypatch):
    monkeypatch.setenv("SELFCAL_SFM_OUTPUT", str(tmp_path))
    return tmp_path


@pytest.fixture
def bundle(outdir):
    assert main(["synth", "--n", "4", "--m", "20", "--delta", "0.2", "--seed", "1", "--out", "scene"]) == EXIT_OK
    return outdir / "scene"


def test_synth_creates_bundle(outdir, capsys):
    assert main(["synth", "--n", "3", "--m", "20", "--seed", "2", "--out", "deep/dir"]) == EXIT_OK
    scene, M = load_scene_bundle(outdir / "deep/dir")
    assert scene.inlier_mask_true.sum() == 20 and M.shape == (9, 20)
    assert "inliers=20" in capsys.readouterr().out


def test_synth_from_toml(outdir, tmp_path):
    (tmp_path / "c.toml").write_text("[scene]\nn_views = 3\nm_points = 12\nseed = 4\n")
    assert main(["synth", "--config", str(tmp_path / "c.toml"), "--out", "x"]) == EXIT_OK
    assert load_scene_bundle(outdir / "x")[0].config.m_points == 12


@pytest.mark.parametrize(
    "argv",
    [
        ["synth", "--delta", "1.0"],
        ["synth", "--n", "1"],
        ["synth", "--bogus"],
        ["solve", "does/not/exist"],
        ["sweep", "--factor", "delta"],
    ],
)
def test_invalid_input_exit_code(outdir, argv, capsys):
    assert main(argv) == EXIT_INVALID
    assert capsys.readouterr().err


def test_unknown_config_section(outdir, tmp_path, capsys):
    (tmp_path / "c.json").write_text('{"scenery": {}}')
    assert main(["synth", "--config", str(tmp_path / "c.json")]) == EXIT_INVALID
    assert "scenery" in capsys.readouterr().err


def test_solve_clean_bundle(outdir):
    assert main(["synth", "--n", "4", "--m", "20", "--seed", "3", "--out", "clean"]) == EXIT_OK
    assert main(["solve", str(outdir / "clean"), "--out", "sol", "--plot", *FAST]) == EXIT_OK
    res = json.loads((outdir / "sol/result.json").read_text())
    assert all(res["inlier_mask"])
    for name in ("loss_trace.csv", "calibration.json", "solver_config.json", "loss.svg"):
        assert (outdir / "sol" / name).exists()


def test_solve_beta_zero_keeps_initial_calibration(bundle, outdir):
    assert main(["solve", str(bundle), "--out", "b0", "--beta", "0", *FAST]) == EXIT_OK
    cal = json.loads((outdir / "b0/calibration.json").read_text())
    np.testing.assert_allclose(cal["K"], [[768, 0, 320], [0, 768, 240], [0, 0, 1]], atol=1e-9)


def test_solve_is_byte_identical(bundle, outdir):
    main(["solve", str(bundle), "--out", "r1", *FAST])
    main(["solve", str(bundle), "--out", "r2", *FAST])
    assert (outdir / "r1/result.json").read_bytes() == (outdir / "r2/result.json").read_bytes()


def test_solve_degenerate_exit(bundle, outdir):
    assert main(["solve", str(bundle), "--out", "d", "--inlier-threshold", "0.999", "--max-iters", "3"]) == EXIT_DEGENERATE


def test_solve_track_csv(outdir, bundle):
    scene, _ = load_scene_bundle(bundle)
    write_tracks(outdir / "t.csv", scene.tracks)
    assert main(["solve", str(outdir / "t.csv"), "--out", "fromcsv", "--image-size", "640", "480", *FAST]) in (
        EXIT_OK,
        EXIT_DEGENERATE,
    )
    assert (outdir / "fromcsv/result.json").exists()


def test_eval_with_scene(bundle, outdir, capsys):
    main(["solve", str(bundle), "--out", "s", *FAST])
    assert main(["eval", str(outdir / "s"), "--scene", str(bundle), "--alignment", "similarity"]) == EXIT_OK
    rep = json.loads((outdir / "s/report.json").read_text())
    for key in ("f1", "error_2d_px", "error_3d_rel", "focal_error_rel"):
        assert key in rep
    assert 0 <= rep["f1"] <= 1


def test_eval_tracks_only(bundle, outdir, capsys):
    main(["solve", str(bundle), "--out", "s", *FAST])
    scene, _ = load_scene_bundle(bundle)
    write_tracks(outdir / "t.csv", scene.tracks)
    assert main(["eval", str(outdir / "s"), "--tracks", str(outdir / "t.csv")]) == EXIT_OK
    assert "no ground truth" in capsys.readouterr().err
    rep = json.loads((outdir / "s/report.json").read_text())
    assert "f1" not in rep and rep["error_2d_px"] is not None


def test_eval_malformed_field(outdir, capsys):
    (outdir / "result.json").write_text(json.dumps({"soft_weights": "x", "inlier_mask": [], "calibration": {}}))
    assert main(["eval", str(outdir / "result.json"), "--tracks", "none.csv"]) == EXIT_INVALID
    assert "soft_weights" in capsys.readouterr().err


def test_sweep(outdir):
    argv = ["sweep", "--factor", "sigma", "--values", "0", "0.05", "0.11", "--trials", "3", "--n", "3", "--m", "16",
            "--delta", "0.25", "--out", "sw", "--max-iters", "30"]
    assert main(argv) == EXIT_OK
    with open(outdir / "sw/trials.csv") as fh:
        rows = list(csv.DictReader(fh))
    for v in ("baseline", "beta0", "beta1"):
        assert sum(r["variant"] == v for r in rows) == 9
    assert {float(r["sigma"]) for r in rows} == {0.0, 0.05, 0.11}
    with open(outdir / "sw/summary.csv") as fh:
        summary = list(csv.DictReader(fh))
    assert len(summary) == 9 and all(r["n_trials"] == "3" for r in summary)
    assert (outdir / "sw/f1.svg").read_text().startswith("<svg")


def test_module_entry_point(outdir):
    proc = subprocess.run([sys.executable, "-m", "selfcal_sfm.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "synth" in proc.stdout
