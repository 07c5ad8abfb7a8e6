"""Bundled experiment configurations for the synthetic benchmarks.

Regularization weights are in this package's units: the expected-L0 term is
summed over features and averaged over rows.
"""
from __future__ import annotations

from .errors import ConfigError
from .experiment import DatasetSpec, ExperimentConfig
from .gates import GateConfig
from .model import NetworkSpec, TrainConfig, gating_spec
from .synthdata import SplitSpec


def _linear(seed: int, lspin: bool) -> ExperimentConfig:
    act = "tanh" if lspin else "identity"
    return ExperimentConfig(
        name="linear" if lspin else "linear_llspin",
        dataset=DatasetSpec(generator="linear"),
        gating=gating_spec(5, [10], 0.5),
        prediction=NetworkSpec([100, 100, 10, 1], act, "identity", 0.1),
        gates=GateConfig(lambda1=0.02),
        training=TrainConfig(epochs=3000, learning_rate=0.02, seed=seed),
        split=SplitSpec(10, 60, 60, seed=seed),
        seed=seed,
        grid={"lambda1": [0.002, 0.02, 0.1]},
    )


def linear(seed: int = 0) -> ExperimentConfig:
    """Activation-free prediction network on ten training rows."""
    return _linear(seed, lspin=False)


def linear_unequal(seed: int = 0) -> ExperimentConfig:
    return ExperimentConfig(
        name="linear_unequal",
        dataset=DatasetSpec(generator="linear_unequal"),
        gating=gating_spec(5, [100, 100], 0.1),
        prediction=NetworkSpec([100, 10, 1], "relu", "identity", 0.1, use_batch_norm=True),
        gates=GateConfig(lambda1=0.003),
        training=TrainConfig(epochs=3500, learning_rate=0.2, seed=seed),
        split=SplitSpec(480, 60, 60, seed=seed),
        seed=seed,
    )


def _e123(variant: str, seed: int, lambda1: float, epochs: int) -> ExperimentConfig:
    return ExperimentConfig(
        name=variant,
        dataset=DatasetSpec(generator=variant),
        gating=gating_spec(11, [100, 100], 0.1),
        prediction=NetworkSpec([100, 100, 2], "tanh", "identity", 0.1, use_batch_norm=True),
        gates=GateConfig(lambda1=lambda1),
        training=TrainConfig(epochs=epochs, learning_rate=0.1, seed=seed),
        split=SplitSpec(0.855, 0.045, 0.1, seed=seed),
        seed=seed,
    )


def e1(seed: int = 0) -> ExperimentConfig:
    return _e123("E1", seed, 0.02, 2500)


def e2(seed: int = 0) -> ExperimentConfig:
    return _e123("E2", seed, 0.012, 2500)


def e3(seed: int = 0) -> ExperimentConfig:
    return _e123("E3", seed, 0.016, 2500)


def e1_overlap(seed: int = 0) -> ExperimentConfig:
    return ExperimentConfig(
        name="E1_overlap",
        dataset=DatasetSpec(generator="E1_overlap"),
        gating=gating_spec(11, [100, 100], 0.1),
        prediction=NetworkSpec([100, 100, 2], "tanh", "identity", 0.1, use_batch_norm=True),
        gates=GateConfig(lambda1=0.015),
        training=TrainConfig(epochs=1000, batch_size=1000, learning_rate=0.08, seed=seed),
        split=SplitSpec(0.9, 0.05, 0.05, seed=seed),
        seed=seed,
    )


def _e4(seed: int, lspin: bool) -> ExperimentConfig:
    act = "tanh" if lspin else "identity"
    # the linear predictor needs a lighter penalty to keep both features of a pair open
    lambda1 = 0.05 if lspin else 0.02
    return ExperimentConfig(
        name="E4" if lspin else "E4_llspin",
        dataset=DatasetSpec(generator="E4"),
        gating=gating_spec(50, [50, 50], 0.1),
        prediction=NetworkSpec([100, 100, 2], act, "identity", 0.1, use_batch_norm=True),
        gates=GateConfig(lambda1=lambda1),
        training=TrainConfig(epochs=2000, learning_rate=0.1, seed=seed),
        split=SplitSpec(0.855, 0.095, 0.05, seed=seed),
        seed=seed,
        metrics=["prediction", "selection", "gates", "stability"],
    )


def e4(seed: int = 0) -> ExperimentConfig:
    return _e4(seed, lspin=True)


def e4_llspin(seed: int = 0) -> ExperimentConfig:
    return _e4(seed, lspin=False)


def e5(seed: int = 0) -> ExperimentConfig:
    return ExperimentConfig(
        name="E5",
        dataset=DatasetSpec(generator="E5"),
        gating=gating_spec(21, [100], 0.1),
        prediction=NetworkSpec([500, 100, 1], "leaky-relu", "identity", 0.1),
        gates=GateConfig(lambda1=0.05),
        training=TrainConfig(epochs=1500, learning_rate=0.05, seed=seed),
        split=SplitSpec(1500, 300, 300, seed=seed),
        seed=seed,
    )


PRESETS = {
    "linear": linear,
    "linear_unequal": linear_unequal,
    "E1": e1,
    "E2": e2,
    "E3": e3,
    "E1_overlap": e1_overlap,
    "E4": e4,
    "E4_llspin": e4_llspin,
    "E5": e5,
}


def preset(name: str, seed: int = 0) -> ExperimentConfig:
    key = {k.lower(): k for k in PRESETS}.get(name.lower())
    if key is None:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[key](seed)
