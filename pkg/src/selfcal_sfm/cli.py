"""Command-line interface: ``synth``, ``solve``, ``eval`` and ``sweep``.

Exit status: 0 on success, 1 for invalid input (bad flags, config or
files), 2 when the solve is degenerate (too few inliers or no
reconstruction). Relative output paths are resolved against the directory
named by ``SELFCAL_SFM_OUTPUT`` (default: the current directory).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import io as fio
from .evalkit import aggregate_sweep, f1_score, table_to_csv
from .exceptions import ConfigError, GeometryError
from .experiment import METRICS, VARIANTS, run_variant, score_reconstruction
from .factorization import build_measurement_matrix, estimate_depths
from .geometry import ProjectiveReconstruction
from .plot import write_line_chart
from .selfcalib import CalibrationEstimate
from .solver import SolverConfig, load_config_file, solve
from .synthgen import SceneConfig, image_normalization, make_problem

logger = logging.getLogger("selfcal_sfm")

OUTPUT_ENV = "SELFCAL_SFM_OUTPUT"
EXIT_OK, EXIT_INVALID, EXIT_DEGENERATE = 0, 1, 2
SWEEP_FACTORS = {"m": "m_points", "n": "n_views", "delta": "outlier_rate", "sigma": "noise_sigma"}

# flag name -> SolverConfig field
SOLVER_FLAGS = {
    "alpha": "alpha",
    "beta": "beta",
    "t": "t",
    "t_mode": "t_mode",
    "lr": "learning_rate",
    "max_iters": "max_iters",
    "inlier_threshold": "inlier_threshold",
    "proj_loss_variant": "proj_loss_variant",
    "parameterization": "parameterization",
    "solver_seed": "seed",
}
SCENE_FLAGS = {"n": "n_views", "m": "m_points", "delta": "outlier_rate", "sigma": "noise_sigma", "seed": "seed",
               "pad_rows": "pad_rows", "pad_cols": "pad_cols"}


class UsageError(Exception):
    pass


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "."))


def resolve_out(path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else output_root() / p


# --- configuration --------------------------------------------------------


def _load_spec(args) -> dict:
    if not getattr(args, "config", None):
        return {}
    spec = load_config_file(args.config)
    if not isinstance(spec, dict):
        raise ConfigError(f"{args.config}: top level must be a table/object")
    unknown = set(spec) - {"scene", "solver", "sweep", "output_dir"}
    if unknown:
        raise ConfigError(f"{args.config}: unknown section(s) {', '.join(sorted(unknown))}")
    return spec


def scene_config(args, spec: dict) -> SceneConfig:
    d = dict(spec.get("scene", {}))
    for flag, name in SCENE_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            d[name] = v
    known = {f.name for f in fields(SceneConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown scene field(s): {', '.join(sorted(unknown))}")
    try:
        return SceneConfig.from_dict(d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def solver_config(args, spec: dict) -> SolverConfig:
    d = dict(spec.get("solver", {}))
    for flag, name in SOLVER_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            d[name] = v
    return SolverConfig.from_dict(d)


def _add_scene_flags(p):
    g = p.add_argument_group("scene")
    g.add_argument("--n", type=int, help="number of views")
    g.add_argument("--m", type=int, help="number of tracks")
    g.add_argument("--delta", type=float, help="outlier rate in [0, 1)")
    g.add_argument("--sigma", type=float, help="noise level as a fraction of the matrix RMS")
    g.add_argument("--seed", type=int, help="scene seed")
    g.add_argument("--pad-rows", type=int)
    g.add_argument("--pad-cols", type=int)


def _add_solver_flags(p):
    g = p.add_argument_group("solver")
    g.add_argument("--alpha", type=float)
    g.add_argument("--beta", type=float)
    g.add_argument("--t", type=float)
    g.add_argument("--t-mode", choices=("count", "absolute"))
    g.add_argument("--lr", type=float)
    g.add_argument("--max-iters", type=int)
    g.add_argument("--inlier-threshold", type=float)
    g.add_argument("--proj-loss-variant", choices=("tail_sum", "sigma4"))
    g.add_argument("--parameterization", choices=("direct", "encoder"))
    g.add_argument("--solver-seed", type=int, help="seed of the encoder initialisation")


# --- commands -------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = _load_spec(args)
    cfg = scene_config(args, spec)
    scene, M = make_problem(cfg)
    out = resolve_out(args.out or spec.get("output_dir") or f"scene_seed{cfg.seed}")
    fio.save_scene_bundle(out, scene, M)
    print(
        f"n={cfg.n_views} m={cfg.m_points} delta={cfg.outlier_rate} sigma={cfg.noise_sigma} "
        f"seed={cfg.seed} inliers={int(scene.inlier_mask_true.sum())} -> {out}"
    )
    return EXIT_OK


def _problem_from_input(args):
    """``(scene or None, M)`` from a scene bundle directory or a track CSV."""
    src = Path(args.input)
    if src.is_dir():
        scene, M = fio.load_scene_bundle(src)
        if M is None:
            M = scene.measurement_matrix()
        return scene, M
    if not src.exists():
        raise FileNotFoundError(f"{src}: no such file or directory")
    tracks = fio.read_tracks(src)
    if args.image_size:
        size = tuple(args.image_size)
    else:
        xy = tracks[:, :, :2] / tracks[:, :, 2:3]
        size = (float(np.ceil(xy[..., 0].max())), float(np.ceil(xy[..., 1].max())))
    T = image_normalization(size)
    depths = estimate_depths(tracks @ T.T, args.depths)
    return None, build_measurement_matrix(tracks, depths, T)


def cmd_solve(args) -> int:
    spec = _load_spec(args)
    cfg = solver_config(args, spec)
    scene, M = _problem_from_input(args)
    out = resolve_out(args.out or spec.get("output_dir") or "solve")
    out.mkdir(parents=True, exist_ok=True)
    result = solve(M, cfg)
    fio.save_result(out / "result.json", result)
    fio.write_loss_trace(out / "loss_trace.csv", result.loss_trace)
    fio.save_calibration(out / "calibration.json", result.calibration)
    (out / "solver_config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True))
    if args.plot:
        tr = result.loss_trace
        write_line_chart(
            out / "loss.svg",
            {name: (tr[:, 0].tolist(), tr[:, k].tolist()) for k, name in enumerate(("L_num", "L_proj", "L_DAQ", "total"), 1)},
            title="loss", xlabel="iteration", ylabel="loss",
        )
    d = result.diagnostics
    print(f"inliers={d['n_inliers']} focal={result.calibration.focal:.2f} converged={d['converged']} -> {out}")
    if d["too_few_inliers"] or d["degenerate"]:
        print("degenerate solve: too few inliers or no reconstruction", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


def cmd_eval(args) -> int:
    res_path = Path(args.result)
    if res_path.is_dir():
        res_path = res_path / "result.json"
    res = fio.load_result(res_path)
    scene = None
    if args.scene:
        scene, _ = fio.load_scene_bundle(args.scene)
    mask = res["inlier_mask"]
    report = {"alignment_used": args.alignment}
    recon = None
    if res["reconstruction"] is not None:
        recon = ProjectiveReconstruction(*res["reconstruction"])
    cal: CalibrationEstimate = res["calibration"]
    if scene is not None:
        m = scene.tracks.shape[1]
        pred = mask[:m]
        cls = f1_score(pred, scene.inlier_mask_true)
        report.update(cls.to_dict())
        eval_mask = scene.inlier_mask_true if args.mask_mode == "truth" else pred
        alignment = args.alignment
        if alignment == "similarity" and (res["n_inf_reconstruction"] is None or cal.frame != "pixel"):
            print("notice: similarity alignment needs a pixel-frame calibration; using homography", file=sys.stderr)
            alignment = "homography"
        rep = score_reconstruction(
            scene, recon, np.flatnonzero(pred), eval_mask,
            K_est=cal.K if cal.frame == "pixel" else None, n_inf=res["n_inf_reconstruction"], alignment=alignment,
        )
        report.update(rep.to_dict())
    else:
        print("notice: no ground truth given; F1, 3D and focal errors skipped", file=sys.stderr)
        if args.tracks is None:
            raise UsageError("eval without --scene needs --tracks for the 2D error")
        from .evalkit import error_2d

        tracks = fio.read_tracks(args.tracks)
        cols = np.flatnonzero(mask[: tracks.shape[1]])
        report["error_2d_px"] = None if recon is None else error_2d(recon, tracks, np.isin(np.arange(tracks.shape[1]), cols))
    out = resolve_out(args.out) if args.out else res_path.parent
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    table_to_csv([report], out / "report.csv")
    print(" ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in sorted(report.items())))
    return EXIT_OK


def _cell_seed(base: int, value_index: int, trial_index: int) -> int:
    """Scene seed of one sweep cell, derived from the base seed, value index and trial index."""
    return int(np.random.SeedSequence([int(base), int(value_index), int(trial_index)]).generate_state(1, np.uint32)[0])


def _run_cell(job):
    scene_cfg, solver_cfg, variants = job
    scene, M = make_problem(scene_cfg)
    rows = []
    for v in variants:
        try:
            metrics, error = run_variant(v, scene, M, solver_cfg), ""
        except (GeometryError, np.linalg.LinAlgError, ValueError) as exc:
            metrics, error = {}, f"{type(exc).__name__}: {exc}"
        rows.append((v, metrics, error))
    return rows


def cmd_sweep(args) -> int:
    spec = _load_spec(args)
    sw = dict(spec.get("sweep", {}))
    factor = args.factor or sw.get("factor")
    values = args.values or sw.get("values")
    trials = args.trials or sw.get("trials_per_value", 3)
    variants = args.variants.split(",") if args.variants else sw.get("variants", list(VARIANTS))
    if factor not in SWEEP_FACTORS:
        raise UsageError(f"--factor must be one of {', '.join(SWEEP_FACTORS)}")
    if not values:
        raise UsageError("--values is required")
    bad = set(variants) - set(VARIANTS)
    if bad:
        raise UsageError(f"unknown variant(s) {', '.join(sorted(bad))}")
    base = scene_config(args, spec)
    cfg = solver_config(args, spec)
    field = SWEEP_FACTORS[factor]
    cast = int if factor in ("m", "n") else float
    jobs, keys = [], []
    for vi, value in enumerate(values):
        for ti in range(int(trials)):
            sc = replace(base, **{field: cast(value), "seed": _cell_seed(base.seed, vi, ti)})
            jobs.append((sc, cfg, variants))
            keys.append((cast(value), ti, sc.seed))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            cells = list(pool.map(_run_cell, jobs))
    else:
        cells = [_run_cell(j) for j in jobs]

    trial_rows, results = [], []
    for (value, ti, seed), cell in zip(keys, cells):
        for variant, metrics, error in cell:
            row = {"variant": variant, factor: value, "trial": ti, "seed": seed, "error": error}
            row.update({k: metrics.get(k) for k in METRICS})
            trial_rows.append(row)
            if not error:
                results.append(({"variant": variant, factor: value}, {k: metrics.get(k) for k in METRICS}))
    out = resolve_out(args.out or spec.get("output_dir") or f"sweep_{factor}")
    out.mkdir(parents=True, exist_ok=True)
    table_to_csv(trial_rows, out / "trials.csv")
    summary = aggregate_sweep(results) if results else []
    table_to_csv(summary, out / "summary.csv")
    for metric, label in (("f1", "F1"), ("error_2d_px", "2D error [px]"), ("error_3d_rel", "3D error")):
        series, errs = {}, {}
        for v in variants:
            rows = [r for r in summary if r["variant"] == v]
            series[v] = ([r[factor] for r in rows], [r[f"{metric}_mean"] for r in rows])
            errs[v] = [r[f"{metric}_std"] for r in rows]
        write_line_chart(out / f"{metric}.svg", series, errors=errs, title=f"{label} vs {factor}", xlabel=factor, ylabel=label)
    failed = sum(1 for r in trial_rows if r["error"])
    print(f"{len(trial_rows)} trial rows ({failed} failed) -> {out}")
    return EXIT_OK


# --- entry point ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selfcal-sfm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene bundle")
    p.add_argument("--config")
    p.add_argument("--out")
    _add_scene_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("solve", help="run the robust solver on a scene bundle or a track CSV")
    p.add_argument("input", help="scene bundle directory or track CSV")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--plot", action="store_true", help="also write loss.svg")
    p.add_argument("--depths", choices=("unit", "fundamental_chain"), default="fundamental_chain",
                   help="depth initialisation for track CSV input")
    p.add_argument("--image-size", type=float, nargs=2, metavar=("W", "H"),
                   help="image size of track CSV input (default: extent of the tracks)")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("eval", help="score a solve result")
    p.add_argument("result", help="result.json or the solve output directory")
    p.add_argument("--scene", help="scene bundle with ground truth")
    p.add_argument("--tracks", help="track CSV for the 2D error when no scene is given")
    p.add_argument("--mask-mode", choices=("truth", "detected"), default="truth")
    p.add_argument("--alignment", choices=("homography", "similarity"), default="homography")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run a synthetic sweep over one factor")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--factor", choices=tuple(SWEEP_FACTORS))
    p.add_argument("--values", type=float, nargs="+")
    p.add_argument("--trials", type=int)
    p.add_argument("--variants", help="comma-separated subset of " + ",".join(VARIANTS))
    p.add_argument("--jobs", type=int, default=1, help="cells run in parallel")
    _add_scene_flags(p)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, fio.FormatError, UsageError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except GeometryError as exc:
        print(f"degenerate: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
