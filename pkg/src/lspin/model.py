"""Gating network + prediction network, losses, SGD trainer and inference."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import (
    Activation,
    BatchNormState,
    ShapeError,
    Tape,
    Tensor,
    record_op,
    affine_forward,
    apply_activation,
    as_tensor,
    batch_norm,
    softmax,
    softmax_cross_entropy,
    tmean,
    tsum,
)
from .gates import GateConfig, deterministic_gates, expected_l0, kernel_penalty, sample_gates
from .errors import ConfigError, DegenerateDataError, DivergenceError, SpecError
from .synthdata import CLASSIFICATION, REGRESSION, SURVIVAL, LabeledTable

CHECKPOINT_VERSION = 1
TASKS = (REGRESSION, CLASSIFICATION, "cox")


@dataclass
class NetworkSpec:
    """Layer widths after the input (last entry is the output width).

    ``init_scale=None`` means 1/sqrt(input width).
    """

    layer_sizes: list[int]
    hidden_activation: str = Activation.TANH.value
    output_activation: str = Activation.IDENTITY.value
    init_scale: float | None = 0.1
    use_batch_norm: bool = False

    def __post_init__(self):
        self.layer_sizes = [int(w) for w in self.layer_sizes]
        if not self.layer_sizes or min(self.layer_sizes) < 1:
            raise SpecError("a network needs at least one layer of positive width")
        self.hidden_activation = Activation(self.hidden_activation).value
        self.output_activation = Activation(self.output_activation).value
        if self.init_scale is not None and self.init_scale < 0:
            raise SpecError("init_scale must be non-negative")


def gating_spec(n_features: int, hidden: list[int], init_scale: float | None = 0.1) -> NetworkSpec:
    return NetworkSpec(list(hidden) + [n_features], Activation.TANH.value, Activation.TANH.value, init_scale)


class Network:
    """Stack of affine layers with optional batch norm before each hidden activation."""

    def __init__(self, spec: NetworkSpec, in_dim: int, rng: np.random.Generator):
        self.spec = spec
        self.in_dim = in_dim
        s = spec.init_scale if spec.init_scale is not None else 1.0 / math.sqrt(in_dim)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        self.norms: list[BatchNormState] = []
        width = in_dim
        for k, out in enumerate(spec.layer_sizes):
            w = rng.normal(0.0, s, size=(width, out)) if s > 0 else np.zeros((width, out))
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros(out), requires_grad=True))
            if spec.use_batch_norm and k < len(spec.layer_sizes) - 1:
                self.norms.append(BatchNormState(out))
            width = out

    @property
    def out_dim(self) -> int:
        return self.spec.layer_sizes[-1]

    def parameters(self) -> list[Tensor]:
        params = [t for pair in zip(self.weights, self.biases) for t in pair]
        for bn in self.norms:
            params += [bn.gamma, bn.beta]
        return params

    def forward(self, x, train: bool = False) -> Tensor:
        h = as_tensor(x)
        if h.shape[1] != self.in_dim:
            raise ShapeError(f"expected {self.in_dim} input columns, got {h.shape[1]}")
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = affine_forward(h, w, b)
            if k < last:
                if self.norms:
                    h = batch_norm(h, self.norms[k], "train" if train else "eval")
                h = apply_activation(h, self.spec.hidden_activation)
            else:
                h = apply_activation(h, self.spec.output_activation)
        return h

    __call__ = forward

    def state(self) -> dict:
        return {
            "weights": [w.data.tolist() for w in self.weights],
            "biases": [b.data.tolist() for b in self.biases],
            "batch_norm": [
                {
                    "gamma": bn.gamma.data.tolist(),
                    "beta": bn.beta.data.tolist(),
                    "running_mean": bn.running_mean.tolist(),
                    "running_var": bn.running_var.tolist(),
                }
                for bn in self.norms
            ],
        }

    def load_state(self, state: dict) -> None:
        for t, v in zip(self.weights, state["weights"]):
            t.data = np.array(v, dtype=np.float64).reshape(t.shape)
        for t, v in zip(self.biases, state["biases"]):
            t.data = np.array(v, dtype=np.float64).reshape(t.shape)
        for bn, v in zip(self.norms, state["batch_norm"]):
            bn.gamma.data = np.array(v["gamma"], dtype=np.float64)
            bn.beta.data = np.array(v["beta"], dtype=np.float64)
            bn.running_mean = np.array(v["running_mean"], dtype=np.float64)
            bn.running_var = np.array(v["running_var"], dtype=np.float64)


@dataclass
class LspinModel:
    gating: Network
    prediction: Network
    gate_config: GateConfig
    task: str
    n_features: int

    def parameters(self) -> list[Tensor]:
        return self.gating.parameters() + self.prediction.parameters()


@dataclass
class TrainConfig:
    """SGD settings. ``batch_size=None`` trains on the full batch."""

    epochs: int = 1000
    batch_size: int | None = None
    learning_rate: float = 0.1
    seed: int = 0
    lambda2_warmup_epochs: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be positive")


def init_model(
    gating_spec: NetworkSpec,
    prediction_spec: NetworkSpec,
    gate_config: GateConfig,
    task: str,
    seed: int,
    n_features: int | None = None,
) -> LspinModel:
    """Draw weights N(0, s) with zero biases; gating output must be tanh with width D."""
    if task not in TASKS:
        raise SpecError(f"task must be one of {TASKS}")
    d = gating_spec.layer_sizes[-1] if n_features is None else n_features
    if gating_spec.layer_sizes[-1] != d:
        raise SpecError(f"gating output width {gating_spec.layer_sizes[-1]} != {d} features")
    if gating_spec.output_activation != Activation.TANH.value:
        raise SpecError("gating network must end in tanh")
    if task == REGRESSION or task == "cox":
        if prediction_spec.layer_sizes[-1] != 1:
            raise SpecError(f"{task} needs a single prediction output")
    elif prediction_spec.layer_sizes[-1] < 2:
        raise SpecError("classification needs at least two outputs")
    rng = np.random.default_rng(seed)
    gating = Network(gating_spec, d, rng)
    prediction = Network(prediction_spec, d, rng)
    return LspinModel(gating, prediction, gate_config, task, d)


# losses


def cox_partial_likelihood(risk, times, events) -> Tensor:
    """Negative Cox log partial likelihood (Breslow ties), divided by the event count."""
    risk = as_tensor(risk)
    h = risk.data.reshape(-1)
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    events = np.asarray(events, dtype=bool).reshape(-1)
    if not (h.size == times.size == events.size):
        raise ShapeError("risk, times and events must have equal length")
    n_events = int(events.sum())
    if n_events == 0:
        raise DegenerateDataError("partial likelihood needs at least one event")
    order = np.argsort(-times, kind="stable")
    t_desc = -times[order]
    hs = h[order]
    ev = events[order]
    shift = hs.max()
    e = np.exp(hs - shift)
    cum = np.cumsum(e)
    # risk set {j : t_j >= t_i} ends at the last tied position in descending order
    end = np.searchsorted(t_desc, t_desc, side="right") - 1
    start = np.searchsorted(t_desc, t_desc, side="left")
    denom = cum[end]
    loss = -np.sum((hs - shift - np.log(denom))[ev]) / n_events

    def vjp(g):
        w = np.where(ev, 1.0 / denom, 0.0)
        tail = np.cumsum(w[::-1])[::-1]
        grad_sorted = -(ev.astype(np.float64) - e * tail[start]) / n_events
        grad = np.empty_like(grad_sorted)
        grad[order] = grad_sorted
        return (g * grad.reshape(risk.shape),)

    return record_op(np.asarray(loss), (risk,), vjp)


def prediction_loss(output: Tensor, task: str, y, event=None) -> Tensor:
    if task == REGRESSION:
        target = np.asarray(y, dtype=np.float64).reshape(output.shape)
        return tmean(tsum((output - target).square(), axis=1))
    if task == CLASSIFICATION:
        return softmax_cross_entropy(output, y)
    if task == "cox":
        if event is None:
            raise ConfigError("cox task needs event indicators")
        return cox_partial_likelihood(output, y, event)
    raise SpecError(f"unknown task {task!r}")


@dataclass
class LossParts:
    total: Tensor
    prediction: float
    l0: float
    kernel: float
    mu: Tensor
    gates: Tensor


def regularized_loss(
    model: LspinModel,
    X: np.ndarray,
    y,
    event=None,
    *,
    z=None,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
    train: bool = True,
    lambda2: float | None = None,
) -> LossParts:
    """Task loss on f(x * z) + lambda1 E||z||_0 + lambda2 * kernel term."""
    cfg = model.gate_config
    x = Tensor(X)
    mu = model.gating(x, train=train)
    if z is None:
        z = sample_gates(mu, cfg.sigma, rng=rng, noise=noise)
    out = model.prediction(x * z, train=train)
    if model.task == "cox" and not np.any(event):
        pred = Tensor(0.0)
    else:
        pred = prediction_loss(out, model.task, y, event)
    total = pred
    l0 = expected_l0(mu, cfg.sigma, cfg.l0_reduction)
    if cfg.lambda1:
        total = total + l0 * cfg.lambda1
    lam2 = cfg.lambda2 if lambda2 is None else lambda2
    kernel_value = 0.0
    if lam2:
        kern = kernel_penalty(z, X, cfg)
        if kern is not None:
            total = total + kern * lam2
            kernel_value = kern.item()
    return LossParts(total, pred.item(), l0.item(), kernel_value, mu, as_tensor(z))


def compute_loss(model: LspinModel, batch: LabeledTable, z=None, rng=None, noise=None) -> Tensor:
    return regularized_loss(model, batch.X, batch.y, batch.event, z=z, rng=rng, noise=noise).total


def _check_task(model: LspinModel, data: LabeledTable) -> None:
    expected = {REGRESSION: REGRESSION, CLASSIFICATION: CLASSIFICATION, "cox": SURVIVAL}[model.task]
    if data.kind != expected:
        raise ConfigError(f"model task {model.task!r} does not match {data.kind!r} data")
    if data.d != model.n_features:
        raise ShapeError(f"model expects {model.n_features} features, data has {data.d}")


@dataclass
class LossTrace:
    total: list[float] = field(default_factory=list)
    prediction: list[float] = field(default_factory=list)
    l0: list[float] = field(default_factory=list)
    kernel: list[float] = field(default_factory=list)

    def rows(self):
        for k, vals in enumerate(zip(self.total, self.prediction, self.l0, self.kernel)):
            yield (k + 1, *vals)


def train(model: LspinModel, data: LabeledTable, cfg: TrainConfig) -> tuple[LspinModel, LossTrace]:
    """Plain SGD on gating and prediction weights; returns per-epoch mean losses."""
    _check_task(model, data)
    if data.n == 0:
        raise ConfigError("training data is empty")
    if not np.isfinite(data.X).all() or not np.isfinite(data.y).all():
        raise ConfigError("training data must be finite")
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    bs = data.n if cfg.batch_size is None else min(cfg.batch_size, data.n)
    needs_bn = any(net.norms for net in (model.gating, model.prediction))
    trace = LossTrace()
    for epoch in range(1, cfg.epochs + 1):
        order = np.arange(data.n) if bs == data.n else rng.permutation(data.n)
        lam2 = 0.0 if epoch <= cfg.lambda2_warmup_epochs else None
        sums = np.zeros(4)
        n_batches = 0
        for start in range(0, data.n, bs):
            idx = order[start : start + bs]
            if needs_bn and idx.size < 2:
                continue
            event = None if data.event is None else data.event[idx]
            with Tape() as tape:
                parts = regularized_loss(model, data.X[idx], data.y[idx], event, rng=rng, lambda2=lam2)
            value = parts.total.item()
            if not math.isfinite(value):
                raise DivergenceError(epoch)
            grads = tape.gradient(parts.total, params)
            for p, g in zip(params, grads):
                p.data -= cfg.learning_rate * g
            sums += (value, parts.prediction, parts.l0, parts.kernel)
            n_batches += 1
        if n_batches == 0:
            raise ConfigError("no usable batch; increase batch_size")
        mean = sums / n_batches
        trace.total.append(mean[0])
        trace.prediction.append(mean[1])
        trace.l0.append(mean[2])
        trace.kernel.append(mean[3])
    return model, trace


@dataclass
class Prediction:
    values: np.ndarray
    gates: np.ndarray
    probabilities: np.ndarray | None = None


def gate_values(model: LspinModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ShapeError(f"expected {model.n_features} columns")
    return deterministic_gates(model.gating(Tensor(X), train=False))


def predict(model: LspinModel, X: np.ndarray, gates: np.ndarray | None = None) -> Prediction:
    """Deterministic-gate inference; classification values are argmax labels."""
    X = np.asarray(X, dtype=np.float64)
    z = gate_values(model, X) if gates is None else np.asarray(gates, dtype=np.float64)
    out = model.prediction(Tensor(X * z), train=False).data
    if model.task == CLASSIFICATION:
        probs = softmax(out)
        return Prediction(np.argmax(out, axis=1), z, probs)
    return Prediction(out[:, 0], z)


@dataclass
class Explanation:
    gates: np.ndarray
    selected: list[tuple[int, ...]]
    counts: np.ndarray
    median_count: float


def explain(model: LspinModel, X: np.ndarray) -> Explanation:
    """Per-row feature sets {d : gate_d > 0}, reported with 1-based feature numbers."""
    return explanation_from_gates(gate_values(model, X))


def explanation_from_gates(gates: np.ndarray) -> Explanation:
    gates = np.asarray(gates, dtype=np.float64)
    mask = gates > 0.0
    selected = [tuple(int(d) + 1 for d in np.flatnonzero(row)) for row in mask]
    counts = mask.sum(axis=1)
    median = float(np.median(counts)) if counts.size else 0.0
    return Explanation(gates, selected, counts, median)


# checkpoints


def save_checkpoint(model: LspinModel, path: str | Path) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "task": model.task,
        "n_features": model.n_features,
        "gate_config": asdict(model.gate_config),
        "gating_spec": asdict(model.gating.spec),
        "prediction_spec": asdict(model.prediction.spec),
        "gating": model.gating.state(),
        "prediction": model.prediction.state(),
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> LspinModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_VERSION:
        raise SpecError(f"unsupported checkpoint version {doc.get('version')!r}")
    model = init_model(
        NetworkSpec(**doc["gating_spec"]),
        NetworkSpec(**doc["prediction_spec"]),
        GateConfig(**doc["gate_config"]),
        doc["task"],
        seed=0,
        n_features=doc["n_features"],
    )
    model.gating.load_state(doc["gating"])
    model.prediction.load_state(doc["prediction"])
    return model
