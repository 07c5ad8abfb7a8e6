"""Prediction, survival and interpretability metrics."""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .gates import gate_statistics
from .errors import ConfigError, DegenerateDataError, UndefinedMetricError


@dataclass
class MetricReport:
    """Ordered map of named scalars; each name may be set once."""

    values: dict[str, float] = field(default_factory=dict)

    def add(self, name: str, value) -> None:
        if name in self.values:
            raise KeyError(f"metric {name!r} already recorded")
        self.values[name] = float(value) if value is not None else None

    def update(self, items: dict) -> None:
        for k, v in items.items():
            self.add(k, v)

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def to_json(self) -> str:
        return json.dumps(self.values, indent=2, sort_keys=True)

    def write(self, path: str | Path) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(self.to_json() + "\n")
        tmp.replace(path)


# feature selection


@dataclass
class SelectionReport:
    f1: float
    tpr: float
    fdr: float
    tp: int
    fp: int
    fn: int
    counts: np.ndarray
    median_count: float


def _as_mask(selected, n_features: int) -> np.ndarray:
    if isinstance(selected, np.ndarray) and selected.ndim == 2:
        return selected.astype(bool)
    mask = np.zeros((len(selected), n_features), dtype=bool)
    for i, feats in enumerate(selected):
        for f in feats:
            mask[i, int(f) - 1] = True
    return mask


def selection_f1(selected, truth: np.ndarray) -> SelectionReport:
    """Micro-averaged F1/TPR/FDR over every (sample, feature) decision.

    ``selected`` is a boolean N x D mask or a list of 1-based feature sets.
    """
    truth = np.asarray(truth, dtype=bool)
    pred = _as_mask(selected, truth.shape[1])
    if pred.shape != truth.shape:
        raise ValueError(f"selection shape {pred.shape} does not match truth {truth.shape}")
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    f1 = tp / (tp + 0.5 * (fp + fn)) if (tp + fp + fn) else 1.0
    tpr = tp / (tp + fn) if (tp + fn) else 1.0
    fdr = fp / (tp + fp) if (tp + fp) else 0.0
    counts = pred.sum(axis=1)
    median = float(np.median(counts)) if counts.size else 0.0
    return SelectionReport(f1, tpr, fdr, tp, fp, fn, counts, median)


# prediction quality


def accuracy(predicted_labels, labels) -> float:
    predicted_labels = np.asarray(predicted_labels).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    return float(np.mean(predicted_labels == labels))


def mse(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    return float(np.mean((pred - target) ** 2))


def r2_score(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    ss_tot = float(np.sum((target - target.mean()) ** 2))
    if ss_tot == 0.0:
        raise UndefinedMetricError("R^2 is undefined for constant targets")
    return 1.0 - float(np.sum((target - pred) ** 2)) / ss_tot


def nll(probabilities, labels, floor: float = 1e-12) -> float:
    """Mean negative log probability of the true class."""
    p = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    return float(-np.mean(np.log(np.maximum(p[np.arange(len(labels)), labels], floor))))


def prediction_metrics(predictions, targets, task: str, probabilities=None) -> dict[str, float]:
    if task == "classification":
        out = {"accuracy": accuracy(predictions, targets)}
        if probabilities is not None:
            out["nll"] = nll(probabilities, targets)
        return out
    if task == "regression":
        return {"mse": mse(predictions, targets), "r2": r2_score(predictions, targets)}
    raise ConfigError(f"no prediction metrics for task {task!r}")


def concordance_index(risk, times, events) -> float:
    """Harrell's C: pairs (i, j) with event_i and t_i < t_j; risk ties count 1/2."""
    risk = np.asarray(risk, dtype=np.float64).reshape(-1)
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    events = np.asarray(events, dtype=bool).reshape(-1)
    concordant = 0.0
    comparable = 0
    for i in np.flatnonzero(events):
        later = times > times[i]
        n = int(later.sum())
        if n == 0:
            continue
        comparable += n
        concordant += float(np.sum(risk[i] > risk[later])) + 0.5 * float(np.sum(risk[i] == risk[later]))
    if comparable == 0:
        raise DegenerateDataError("no comparable pairs for the concordance index")
    return concordant / comparable


# interpretability


def jaccard(a: set, b: set) -> float:
    union = a | b
    return 1.0 if not union else len(a & b) / len(union)


def diversity_score(per_class_sets: Sequence[Iterable[int]]) -> float:
    """100 * (1 - mean Jaccard overlap between every pair of class feature sets)."""
    sets = [set(s) for s in per_class_sets]
    m = len(sets)
    if m < 2:
        raise ConfigError("diversity needs at least two classes")
    total = sum(jaccard(a, b) for a, b in itertools.combinations(sets, 2))
    return 100.0 * (1.0 - total / (m * (m - 1) / 2))


def class_feature_sets(gates: np.ndarray, labels, threshold: float = 0.5) -> list[set[int]]:
    """Per class, the 1-based features open in at least ``threshold`` of its rows."""
    gates = np.asarray(gates)
    labels = np.asarray(labels).reshape(-1)
    sets = []
    for c in np.unique(labels):
        frac = (gates[labels == c] > 0).mean(axis=0)
        sets.append({int(d) + 1 for d in np.flatnonzero(frac >= threshold)})
    return sets


def _pairwise_distances(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def default_epsilon(X: np.ndarray) -> float:
    """Largest nearest-neighbour distance, so every distinct row has a neighbour."""
    d = _pairwise_distances(np.asarray(X, dtype=np.float64))
    d = np.where(d > 0, d, np.inf)
    nearest = d.min(axis=1)
    if not np.isfinite(nearest).any():
        raise DegenerateDataError("all rows are identical")
    return float(nearest[np.isfinite(nearest)].max())


def lipschitz_per_sample(explanations: np.ndarray, X: np.ndarray, epsilon: float) -> np.ndarray:
    """Max |w_i - w_k| / |x_i - x_k| over 0 < |x_i - x_k| <= epsilon; NaN without neighbours."""
    w = np.asarray(explanations, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    dx = _pairwise_distances(X)
    dw = _pairwise_distances(w)
    neighbour = (dx > 0) & (dx <= epsilon)
    ratio = np.where(neighbour, dw / np.where(dx > 0, dx, 1.0), -np.inf)
    best = ratio.max(axis=1)
    return np.where(neighbour.any(axis=1), best, np.nan)


def stability_lipschitz(explanations: np.ndarray, X: np.ndarray, epsilon: float | None = None) -> float:
    """Mean local Lipschitz estimate of the explanation map (lower is more stable)."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 2:
        raise DegenerateDataError("stability needs at least two samples")
    eps = default_epsilon(X) if epsilon is None else epsilon
    if not eps > 0:
        raise ConfigError("epsilon must be positive")
    per = lipschitz_per_sample(explanations, X, eps)
    if np.all(np.isnan(per)):
        raise DegenerateDataError("no sample has a neighbour within epsilon")
    return float(np.nanmean(per))


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise UndefinedMetricError("correlation is undefined for a constant vector")
    a = a - a.mean()
    b = b - b.mean()
    return float(np.dot(a, b) / math.sqrt(np.dot(a, a) * np.dot(b, b)))


def predictivity_drops(score: Callable[[np.ndarray], float], X: np.ndarray) -> np.ndarray:
    """Score loss when each column is zeroed across the whole dataset."""
    X = np.asarray(X, dtype=np.float64)
    base = score(X)
    drops = np.empty(X.shape[1])
    for d in range(X.shape[1]):
        masked = X.copy()
        masked[:, d] = 0.0
        drops[d] = base - score(masked)
    return drops


def faithfulness(model, X, y, importance=None) -> float:
    """Pearson correlation between feature importance and predictivity drop.

    Classification scores by accuracy, regression by -MSE. ``importance``
    defaults to the mean deterministic gate value of each feature.
    """
    from .model import gate_values, predict

    X = np.asarray(X, dtype=np.float64)
    if importance is None:
        importance = gate_values(model, X).mean(axis=0)
    importance = np.asarray(importance, dtype=np.float64)
    if importance.shape[0] != X.shape[1]:
        raise ConfigError("importance must have one entry per feature")
    if model.task == "classification":
        score = lambda A: accuracy(predict(model, A).values, y)  # noqa: E731
    else:
        score = lambda A: -mse(predict(model, A).values, y)  # noqa: E731
    return pearson(importance, predictivity_drops(score, X))


def best_assignment(confusion: np.ndarray) -> np.ndarray:
    """Column chosen for each row so that the matched trace is maximal."""
    rows, cols = linear_sum_assignment(np.asarray(confusion), maximize=True)
    out = np.empty(len(rows), dtype=np.int64)
    out[rows] = cols
    return out


def brute_force_assignment(confusion: np.ndarray) -> np.ndarray:
    confusion = np.asarray(confusion)
    k = confusion.shape[0]
    best, best_perm = -np.inf, None
    for perm in itertools.permutations(range(k)):
        total = confusion[np.arange(k), perm].sum()
        if total > best:
            best, best_perm = total, perm
    return np.array(best_perm, dtype=np.int64)


def matched_accuracy(clusters, labels) -> float:
    clusters = np.asarray(clusters, dtype=np.int64).reshape(-1)
    _, labels = np.unique(np.asarray(labels).reshape(-1), return_inverse=True)
    k = max(clusters.max(), labels.max()) + 1
    confusion = np.zeros((k, k))
    np.add.at(confusion, (clusters, labels), 1)
    match = best_assignment(confusion)
    return 100.0 * confusion[np.arange(k), match].sum() / len(labels)


def kmeans(X: np.ndarray, k: int, seed: int = 0, restarts: int = 10, max_iter: int = 300):
    """Lloyd's algorithm with k-means++ seeding; best inertia over restarts."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if k > n:
        raise ConfigError(f"k={k} exceeds {n} samples")
    rng = np.random.default_rng(seed)
    best = (np.inf, None, None)
    for _ in range(restarts):
        centers = [X[rng.integers(n)]]
        for _ in range(1, k):
            d2 = np.min(((X[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
            p = d2 / d2.sum() if d2.sum() > 0 else np.full(n, 1.0 / n)
            centers.append(X[rng.choice(n, p=p)])
        centers = np.array(centers)
        for _ in range(max_iter):
            assign = np.argmin(((X[:, None, :] - centers[None]) ** 2).sum(-1), axis=1)
            new = np.array(
                [X[assign == c].mean(axis=0) if np.any(assign == c) else centers[c] for c in range(k)]
            )
            if np.allclose(new, centers):
                break
            centers = new
        inertia = float(((X - centers[assign]) ** 2).sum())
        if inertia < best[0]:
            best = (inertia, assign, centers)
    return best[1], best[2]


def train_linear_svm(
    X: np.ndarray, labels, reg: float = 1e-3, epochs: int = 200, lr: float = 0.1
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One-vs-rest hinge loss with L2 penalty, full-batch subgradient descent."""
    X = np.asarray(X, dtype=np.float64)
    classes, y = np.unique(np.asarray(labels).reshape(-1), return_inverse=True)
    n, d = X.shape
    signs = np.where(y[:, None] == np.arange(len(classes))[None], 1.0, -1.0)
    W = np.zeros((d, len(classes)))
    b = np.zeros(len(classes))
    for t in range(1, epochs + 1):
        margin = signs * (X @ W + b)
        active = (margin < 1.0) * signs
        step = lr / math.sqrt(t)
        W -= step * (reg * W - X.T @ active / n)
        b -= step * (-active.mean(axis=0))
    return W, b, classes


def generalizability(
    X_masked: np.ndarray,
    labels,
    probe: str = "kmeans",
    seed: int = 0,
    test_fraction: float = 0.3,
) -> float:
    """Accuracy (0-100) of a simple probe on feature-masked data."""
    X_masked = np.asarray(X_masked, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    k = len(np.unique(labels))
    if probe == "kmeans":
        assign, _ = kmeans(X_masked, k, seed=seed)
        return matched_accuracy(assign, labels)
    if probe in ("linear", "svm", "linear-classifier"):
        n = X_masked.shape[0]
        order = np.random.default_rng(seed).permutation(n)
        n_test = max(1, int(round(test_fraction * n)))
        te, tr = order[:n_test], order[n_test:]
        W, b, classes = train_linear_svm(X_masked[tr], labels[tr])
        pred = classes[np.argmax(X_masked[te] @ W + b, axis=1)]
        return 100.0 * float(np.mean(pred == labels[te]))
    raise ConfigError(f"unknown probe {probe!r}")


def mask_by_selection(X: np.ndarray, gates: np.ndarray) -> np.ndarray:
    """Zero every column never selected for any row."""
    keep = (np.asarray(gates) > 0).any(axis=0)
    return np.asarray(X, dtype=np.float64) * keep


def gate_convergence_report(train_gates, test_gates) -> dict[str, float]:
    row = {}
    for name, z in (("train", train_gates), ("test", test_gates)):
        zeros, ones, between = gate_statistics(z)
        row[f"{name}_pct0"] = zeros
        row[f"{name}_pct1"] = ones
        row[f"{name}_pct_between"] = between
    return row


def write_table_csv(rows: Sequence[dict], path: str | Path) -> None:
    if not rows:
        raise ValueError("no rows to write")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    tmp.replace(path)
