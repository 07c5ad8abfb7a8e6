"""Stochastic feature gates and their regularizers."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Tensor, as_tensor, clamp01, erf, matmul, tsum

KERNEL_MODES = ("stability", "diversity", "off")


@dataclass
class GateConfig:
    """Gate noise level and regularization weights.

    ``bandwidth=None`` selects the median heuristic for the RBF kernel.
    ``kernel_normalize`` divides the pairwise penalty by the batch size.
    ``l0_reduction`` is ``"mean"`` or ``"sum"`` over the batch rows.
    """

    sigma: float = 0.5
    lambda1: float = 0.1
    lambda2: float = 0.0
    kernel_mode: str = "off"
    bandwidth: float | None = None
    kernel_normalize: bool = True
    l0_reduction: str = "mean"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("regularization weights must be non-negative")
        if self.kernel_mode not in KERNEL_MODES:
            raise ValueError(f"kernel_mode must be one of {KERNEL_MODES}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("fixed bandwidth must be positive")
        if self.l0_reduction not in ("mean", "sum"):
            raise ValueError("l0_reduction must be 'mean' or 'sum'")


def sample_gates(
    mu, sigma: float, rng: np.random.Generator | None = None, noise: np.ndarray | None = None
) -> Tensor:
    """z = clamp01(0.5 + mu + eps) with eps ~ N(0, sigma^2), one draw per entry.

    Passing ``noise`` fixes eps (already scaled by sigma) instead of drawing it.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    mu = as_tensor(mu)
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise is required")
        noise = sigma * rng.standard_normal(mu.shape)
    return clamp01(mu + (0.5 + np.asarray(noise, dtype=np.float64)))


def deterministic_gates(mu) -> np.ndarray:
    mu = mu.data if isinstance(mu, Tensor) else np.asarray(mu, dtype=np.float64)
    return np.clip(0.5 + mu, 0.0, 1.0)


def selected_mask(gates: np.ndarray) -> np.ndarray:
    return np.asarray(gates) > 0.0


def expected_l0(mu, sigma: float, reduction: str = "mean") -> Tensor:
    """Expected number of open gates per row, P(z > 0) = Phi((mu + 0.5) / sigma)."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    mu = as_tensor(mu)
    arg = (mu + 0.5) * (-1.0 / (math.sqrt(2.0) * sigma))
    open_prob = 0.5 - 0.5 * erf(arg)
    total = tsum(open_prob)
    if reduction == "sum":
        return total
    return total * (1.0 / mu.shape[0])


def median_bandwidth(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 2:
        return 1.0
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0)
    iu = np.triu_indices(x.shape[0], k=1)
    h = float(np.median(np.sqrt(d2[iu])))
    return h if h > 0 else 1.0


def rbf_kernel(x: np.ndarray, bandwidth: float | None = None) -> np.ndarray:
    """K_ij = exp(-|x_i - x_j|^2 / (2 h^2)); median pairwise distance when h is None."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 1:
        raise ValueError("kernel needs at least one row")
    h = median_bandwidth(x) if bandwidth is None else float(bandwidth)
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0)
    np.fill_diagonal(d2, 0.0)
    k = np.exp(-d2 / (2.0 * h * h))
    return 0.5 * (k + k.T)


def _weighted_spread(z: Tensor, weights: np.ndarray, normalize: bool) -> Tensor:
    # sum_{i != j} W_ij |z_i - z_j|^2 == 2 tr(Z^T L Z) with L the graph Laplacian of W
    w = np.array(weights, dtype=np.float64)
    if w.shape != (z.shape[0], z.shape[0]):
        raise ValueError(f"kernel shape {w.shape} does not match batch of {z.shape[0]}")
    np.fill_diagonal(w, 0.0)
    lap = np.diag(w.sum(axis=1)) - 0.5 * (w + w.T)
    total = tsum(z * matmul(lap, z)) * 2.0
    return total * (1.0 / z.shape[0]) if normalize else total


def stability_penalty(z, kernel: np.ndarray, normalize: bool = True) -> Tensor:
    """(1/B) sum_{i != j} K_ij |z_i - z_j|^2."""
    return _weighted_spread(as_tensor(z), kernel, normalize)


def diversity_penalty(z, kernel: np.ndarray, normalize: bool = True) -> Tensor:
    """(1/B) sum_{i != j} (1 - K_ij) * (-|z_i - z_j|^2)."""
    return _weighted_spread(as_tensor(z), 1.0 - np.asarray(kernel), normalize) * -1.0


def kernel_penalty(z, x: np.ndarray, config: GateConfig) -> Tensor | None:
    if config.kernel_mode == "off":
        return None
    k = rbf_kernel(x, config.bandwidth)
    if config.kernel_mode == "stability":
        return stability_penalty(z, k, config.kernel_normalize)
    return diversity_penalty(z, k, config.kernel_normalize)


def gate_statistics(z) -> tuple[float, float, float]:
    """Percent of entries equal to 0, equal to 1, and strictly between."""
    z = np.asarray(z.data if isinstance(z, Tensor) else z, dtype=np.float64)
    n = z.size
    if n == 0:
        return 0.0, 0.0, 0.0
    zeros = 100.0 * np.count_nonzero(z == 0.0) / n
    ones = 100.0 * np.count_nonzero(z == 1.0) / n
    return zeros, ones, 100.0 - zeros - ones


def write_gate_csv(
    gates: np.ndarray,
    path: str | Path,
    feature_names: Sequence[str] | None = None,
    row_ids: Sequence | None = None,
) -> None:
    gates = np.asarray(gates)
    if feature_names is None:
        feature_names = [f"x{d + 1}" for d in range(gates.shape[1])]
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow((["row"] if row_ids is not None else []) + list(feature_names))
        for i, row in enumerate(gates):
            prefix = [row_ids[i]] if row_ids is not None else []
            writer.writerow(prefix + [repr(float(v)) for v in row])
    tmp.replace(path)


def read_gate_csv(path: str | Path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        skip = 1 if header and header[0] == "row" else 0
        return np.array([[float(v) for v in row[skip:]] for row in reader])
