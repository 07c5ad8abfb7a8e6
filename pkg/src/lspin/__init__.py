"""Locally sparse networks: per-sample stochastic feature gates trained with a predictor."""
from .errors import ConfigError, DegenerateDataError, DivergenceError, SpecError
from .gates import GateConfig
from .model import NetworkSpec, TrainConfig, explain, gating_spec, init_model, predict, train
from .synthdata import LabeledTable, SplitSpec, generate, split

__all__ = [
    "ConfigError",
    "DegenerateDataError",
    "DivergenceError",
    "GateConfig",
    "LabeledTable",
    "NetworkSpec",
    "SpecError",
    "SplitSpec",
    "TrainConfig",
    "explain",
    "gating_spec",
    "generate",
    "init_model",
    "predict",
    "split",
    "train",
]
