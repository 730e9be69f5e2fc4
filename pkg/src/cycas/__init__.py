"""Self-supervised cross-camera identity learning by cycle association."""

__version__ = "0.1.0"

from .association import (
    ASYMMETRIC,
    SYMMETRIC,
    LossConfig,
    TemperatureConfig,
    adaptive_temperature,
    cycas_backward,
    cycas_forward,
    hungarian,
    linear_assignment,
)
from .simulator import IdentityWorld, SymmetrySchedule, make_world
from .trainer import TrainConfig, make_embedder, train_two_stage

__all__ = [
    "ASYMMETRIC",
    "SYMMETRIC",
    "IdentityWorld",
    "LossConfig",
    "SymmetrySchedule",
    "TemperatureConfig",
    "TrainConfig",
    "adaptive_temperature",
    "cycas_backward",
    "cycas_forward",
    "hungarian",
    "linear_assignment",
    "make_embedder",
    "make_world",
    "train_two_stage",
]
