"""Acceptance criteria 1-10, one test each, each printing a PASS/FAIL line.

Criteria 5 and 10 are not met. Their tests keep the stated tolerances and
are marked as strict expected failures, so they print FAIL, show up as
XFAIL, and turn into errors if they ever start passing.

Solver runs are cached per (variant, scene) so criteria that share seeds
(5 and 6) solve each problem once. The whole module takes roughly a
quarter of an hour on one CPU core.
"""
import json
import subprocess
import sys
import time
from functools import lru_cache

import numpy as np
import pytest

from conftest import assert_gradient_close, central_diff
from selfcal_sfm.evalkit import error_3d
from selfcal_sfm.experiment import run_variant
from selfcal_sfm.factorization import (
    MeasurementMatrix,
    rank4_project,
    sturm_triggs_factorize,
    weighted_reprojection_residual,
)
from selfcal_sfm.selfcalib import daq_residual, metric_upgrade
from selfcal_sfm.solver import SolverConfig, grad_total, init_state, loss_num, loss_proj, loss_total
from selfcal_sfm.solver.losses import grad_loss_num, grad_loss_proj, sigmoid
from selfcal_sfm.synthgen import SceneConfig, canonical_reconstruction, generate_scene, make_problem

pytestmark = pytest.mark.slow

# float slack for comparisons between quantities that can tie exactly
ROUNDING = 1e-12


def report(number, ok, detail):
    line = f"CRITERION {number:2d} {'PASS' if ok else 'FAIL'}: {detail}"
    print("\n" + line, file=sys.__stdout__, flush=True)
    assert ok, line


@lru_cache(maxsize=None)
def trial(variant, delta, sigma, seed):
    cfg = SceneConfig(n_views=10, m_points=200, outlier_rate=delta, noise_sigma=sigma, seed=seed)
    scene, M = make_problem(cfg)
    t0 = time.perf_counter()
    metrics = run_variant(variant, scene, M, SolverConfig())
    metrics["seconds"] = time.perf_counter() - t0
    return metrics


def paired(delta, sigma, seeds, key="f1"):
    a = np.array([trial("beta1", delta, sigma, s)[key] for s in seeds])
    b = np.array([trial("beta0", delta, sigma, s)[key] for s in seeds])
    d = a - b
    return a, b, d.mean(), d.std(ddof=1) / np.sqrt(len(d))


def test_criterion_1_rank_oracle():
    t0 = time.perf_counter()
    worst_ratio = worst_res = 0.0
    for seed in range(100):
        M = generate_scene(SceneConfig(n_views=10, m_points=200, seed=seed)).measurement_matrix()
        s = np.linalg.svd(M.valid_block(), compute_uv=False)
        worst_ratio = max(worst_ratio, s[4] / s[0])
        rec = sturm_triggs_factorize(rank4_project(M))
        worst_res = max(worst_res, weighted_reprojection_residual(M, rec, np.ones(200)))
    secs = time.perf_counter() - t0
    ok = worst_ratio < 1e-10 and worst_res < 1e-8 and secs < 10
    report(1, ok, f"max sigma5/sigma1 {worst_ratio:.2e}, max residual {worst_res:.2e}, {secs:.1f} s for 100 trials")


def test_criterion_2_truncated_svd():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(50):
        r, c = rng.integers(5, 13, size=2)
        r = 3 * max(2, r // 3)
        A = rng.normal(size=(r, c))
        U, s, Vt = np.linalg.svd(A)
        oracle = np.zeros_like(A)
        for k in range(min(4, len(s))):
            for i in range(r):
                for j in range(c):
                    oracle[i, j] += s[k] * U[i, k] * Vt[k, j]
        worst = max(worst, np.linalg.norm(rank4_project(MeasurementMatrix(A)).entries - oracle))
    report(2, worst < 1e-10, f"max Frobenius gap {worst:.2e} over 50 matrices")


def test_criterion_3_gradients():
    rng = np.random.default_rng(3)
    shapes = [(9, 6), (12, 10), (15, 20), (21, 30), (30, 60)]
    worst = 0.0
    for k in range(20):
        B = rng.normal(size=shapes[k % len(shapes)])
        w = rng.uniform(0.05, 0.95, B.shape[1])
        # keep the count exponent near zero so L_num is not vanishingly small
        t = float(np.sum(sigmoid(w - 0.5))) + rng.normal()
        for g, f in (
            (grad_loss_num(w, t), lambda v: loss_num(v, t)),
            (grad_loss_proj(w, B), lambda v: loss_proj(v, B)),
        ):
            fd = central_diff(f, w)
            assert_gradient_close(g, fd)
            big = np.abs(fd) > 1e-6
            worst = max(worst, np.max(np.abs(g - fd)[big] / np.abs(fd)[big]))

    _, M = make_problem(SceneConfig(n_views=10, m_points=30, outlier_rate=0.3, noise_sigma=0.01, seed=8))
    B = M.valid_block() / np.sqrt(np.mean(M.valid_block() ** 2))
    cfg = SolverConfig(daq_start=0.0, daq_warmup=0.0)
    state = init_state(B, cfg)
    state.params["logits"][:] = rng.normal(0, 1.5, B.shape[1])
    state.params["K"][:] = [1.05, 0.97, 0.01, 0.02, -0.03]
    state.params["n_inf"][:] = [0.1, -0.2, 0.3]
    grads, _, _ = grad_total(state, B, cfg)
    keys = ("logits", "K", "n_inf")
    x0 = np.concatenate([state.params[k] for k in keys])
    sizes = np.cumsum([state.params[k].size for k in keys])[:-1]

    def f(x):
        for k, part in zip(keys, np.split(x, sizes)):
            state.params[k][:] = part
        return loss_total(state, B, cfg)[0]

    fd = central_diff(f, x0, h=1e-5)
    g = np.concatenate([grads[k] for k in keys])
    big = np.abs(fd) > 1e-8
    total_err = np.max(np.abs(g - fd)[big] / np.abs(fd)[big])
    ok = worst < 1e-4 and total_err < 1e-3
    report(3, ok, f"L_num/L_proj max rel error {worst:.1e} (20 instances), grad_total max rel error {total_err:.1e}")


def test_criterion_4_daq_ground_truth():
    worst_true, least_bumped = 0.0, np.inf
    for seed in range(10):
        scene = generate_scene(SceneConfig(n_views=5, m_points=50, seed=seed))
        P = canonical_reconstruction(scene).cameras
        worst_true = max(worst_true, daq_residual(P, scene.K_working, scene.n_inf_true))
        for axis in range(3):
            for sign in (-1, 1):
                n = scene.n_inf_true.copy()
                n[axis] += 0.1 * sign
                least_bumped = min(least_bumped, daq_residual(P, scene.K_working, n))
    ok = worst_true < 1e-6 and least_bumped > 1e-3
    report(4, ok, f"max residual at truth {worst_true:.1e}, min residual after 0.1 shift {least_bumped:.2e}")


@pytest.mark.xfail(
    strict=True,
    reason="homography-aligned 3D error cannot see outlier damage to the baseline; "
    "the 3D ratio is about 2x, not 5x (analysis in the decisions ledger)",
)
def test_criterion_5_high_outlier_rate():
    seeds = range(10)
    solver = [trial("beta1", 0.9, 0.003, s) for s in seeds]
    base = [trial("baseline", 0.9, 0.003, s) for s in seeds]
    f1 = np.mean([r["f1"] for r in solver])
    e_solver = np.mean([r["error_3d_rel"] for r in solver])
    e_base = np.mean([r["error_3d_rel"] for r in base])
    slowest = max(r["seconds"] for r in solver)
    # 2D errors are reported for context only; the criterion is on 3D error
    px_solver = np.mean([r["error_2d_px"] for r in solver])
    px_base = np.mean([r["error_2d_px"] for r in base])
    ok = f1 >= 0.90 and e_base >= 5 * e_solver and slowest <= 300
    report(
        5,
        ok,
        f"mean F1 {f1:.3f}; 3D error solver {e_solver:.2e} vs baseline {e_base:.2e} "
        f"(ratio {e_base / e_solver:.1f}x, need 5x); 2D error {px_solver:.2f} px vs {px_base:.2f} px; "
        f"slowest trial {slowest:.1f} s",
    )


def test_criterion_6_calibration_benefit():
    a, b, mean, se = paired(0.9, 0.003, range(20))
    ok = mean >= -se - ROUNDING
    report(
        6,
        ok,
        f"mean F1 beta1 {a.mean():.4f} vs beta0 {b.mean():.4f}; paired diff {mean:+.4f} +- {se:.4f} (SE, 20 seeds)",
    )


def test_criterion_7_focal_accuracy():
    parts, ok = [], True
    for sigma in (0.0, 0.003):
        err = np.mean([trial("beta1", 0.6, sigma, s)["focal_error_rel"] for s in range(10)])
        ok &= err <= 0.05
        parts.append(f"sigma={sigma}: mean focal error {100 * err:.2f}%")
    report(7, ok, "; ".join(parts))


def test_criterion_8_metric_upgrade():
    worst = 0.0
    for seed in range(10):
        scene = generate_scene(SceneConfig(n_views=6, m_points=60, seed=seed))
        up = metric_upgrade(canonical_reconstruction(scene), scene.K_working, scene.n_inf_true)
        worst = max(worst, error_3d(up.points, scene.points_first_camera_frame(), np.ones(60, bool), "similarity"))
    report(8, worst < 1e-6, f"max similarity-aligned 3D error {worst:.1e} over 10 scenes")


def test_criterion_9_determinism(tmp_path):
    cli = [sys.executable, "-m", "selfcal_sfm.cli"]
    subprocess.run(cli + ["synth", "--delta", "0.6", "--sigma", "0.003", "--seed", "9", "--out", str(tmp_path / "s")],
                   check=True, capture_output=True)
    blobs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        subprocess.run(cli + ["solve", str(tmp_path / "s"), "--out", str(out)], check=True, capture_output=True)
        blobs.append((out / "result.json").read_bytes())
    json.loads(blobs[0])
    report(9, blobs[0] == blobs[1], f"two solver processes wrote {len(blobs[0])}-byte results, identical: {blobs[0] == blobs[1]}")


@pytest.mark.xfail(
    strict=True,
    reason="at 6% and 11% noise the calibration is wrong and the DAQ term biases the weights; "
    "beta=1 falls more than one SE below beta=0 (analysis in the decisions ledger)",
)
def test_criterion_10_noise_trend():
    sigmas = (0.003, 0.03, 0.06, 0.11)
    ok, parts = True, []
    for sigma in sigmas:
        a, b, mean, se = paired(0.96, sigma, range(8))
        ok &= mean >= -se - ROUNDING
        parts.append(f"sigma={sigma}: beta1 {a.mean():.3f} beta0 {b.mean():.3f} diff {mean:+.3f}+-{se:.3f}")
    report(10, ok, "; ".join(parts))
