"""Solver configuration and its JSON/TOML loading."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from ..exceptions import ConfigError

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

DEFAULT_LR = {"direct": 0.02, "encoder": 0.001}


@dataclass(frozen=True)
class SolverConfig:
    """Hyper-parameters of the robust self-calibrating solver.

    ``t`` is read according to ``t_mode``: with ``"count"`` it is the least
    number of inliers the count term protects, and is converted to the
    literal exponent threshold for the problem size; with ``"absolute"`` it
    enters the exponent unchanged.

    The DAQ term is switched off for the first ``daq_start`` fraction of the
    iterations, so the weights separate before the calibration moves. After
    that the calibration sees the full DAQ gradient (stepping with
    ``calibration_lr_scale`` times the learning rate), while its gradient on
    the weights ramps linearly to full strength over a further
    ``daq_warmup`` fraction.

    ``learning_rate=None`` picks the per-parameterization default
    (0.02 for free logits, 0.001 for the encoder).
    """

    alpha: float = 1.0
    beta: float = 1.0
    t: float = 15.0
    t_mode: str = "count"
    learning_rate: float | None = None
    max_iters: int = 2000
    inlier_threshold: float = 0.5
    parameterization: str = "direct"
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.9
    adam_eps: float = 1e-8
    proj_loss_variant: str = "tail_sum"
    daq_weight_grad: str = "analytic"
    fd_rel_step: float = 1e-5
    normalize_scale: bool = True
    convergence_window: int = 100
    convergence_tol: float = 1e-8
    encoder_widths: tuple = (64, 128, 1024)
    daq_camera_split: str = "orthonormal"
    daq_start: float = 0.25
    daq_warmup: float = 0.25
    calibration_lr_scale: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.beta < 0:
            raise ConfigError(f"beta must be nonnegative, got {self.beta}")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 < self.inlier_threshold < 1:
            raise ConfigError(f"inlier_threshold must lie in (0, 1), got {self.inlier_threshold}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ConfigError(f"max_iters must be a positive integer, got {self.max_iters}")
        if self.parameterization not in ("direct", "encoder"):
            raise ConfigError(f"parameterization must be 'direct' or 'encoder', got {self.parameterization!r}")
        if self.proj_loss_variant not in ("tail_sum", "sigma4"):
            raise ConfigError(f"proj_loss_variant must be 'tail_sum' or 'sigma4', got {self.proj_loss_variant!r}")
        if self.t_mode not in ("count", "absolute"):
            raise ConfigError(f"t_mode must be 'count' or 'absolute', got {self.t_mode!r}")
        if self.daq_weight_grad not in ("analytic", "finite_difference"):
            raise ConfigError(f"daq_weight_grad must be 'analytic' or 'finite_difference'")
        if self.daq_camera_split not in ("orthonormal", "sqrt"):
            raise ConfigError(f"daq_camera_split must be 'orthonormal' or 'sqrt', got {self.daq_camera_split!r}")
        if not 0 <= self.daq_start < 1:
            raise ConfigError(f"daq_start must lie in [0, 1), got {self.daq_start}")
        if not 0 <= self.daq_warmup <= 1 - self.daq_start:
            raise ConfigError(f"daq_warmup must lie in [0, 1 - daq_start], got {self.daq_warmup}")
        if not self.calibration_lr_scale > 0:
            raise ConfigError(f"calibration_lr_scale must be positive, got {self.calibration_lr_scale}")
        object.__setattr__(self, "encoder_widths", tuple(int(v) for v in self.encoder_widths))

    @property
    def lr(self) -> float:
        return DEFAULT_LR[self.parameterization] if self.learning_rate is None else self.learning_rate

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_widths"] = list(self.encoder_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown solver config field(s): {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config_file(path) -> dict:
    """Read a JSON or TOML file into a dict; errors name the file and line."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            return tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
