from .adam import Adam
from .config import SolverConfig, load_config_file
from .core import (
    SolveResult,
    SolverState,
    adam_step,
    baseline_factorization,
    grad_total,
    init_state,
    loss_total,
    solve,
)
from .encoder import PointSetEncoder, encoder_forward
from .losses import (
    grad_weighted_singular_values,
    loss_daq,
    loss_num,
    loss_proj,
    threshold_for_count,
)

__all__ = [
    "Adam",
    "PointSetEncoder",
    "SolveResult",
    "SolverConfig",
    "SolverState",
    "adam_step",
    "baseline_factorization",
    "encoder_forward",
    "grad_total",
    "grad_weighted_singular_values",
    "init_state",
    "load_config_file",
    "loss_daq",
    "loss_num",
    "loss_proj",
    "loss_total",
    "solve",
    "threshold_for_count",
]
