"""Seeded generate -> split -> train -> evaluate runs with replayable outputs."""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import metrics as M
from .dataset_io import ColumnSchema, load_csv, zscore
from .errors import ConfigError, DivergenceError
from .gates import GateConfig, gate_statistics, write_gate_csv
from .model import (
    LossTrace,
    LspinModel,
    NetworkSpec,
    TrainConfig,
    explain,
    init_model,
    load_checkpoint,
    predict,
    regularized_loss,
    save_checkpoint,
    train,
)
from .synthdata import CLASSIFICATION, REGRESSION, SURVIVAL, LabeledTable, SplitSpec, generate, split

GRID_KEYS = ("lambda1", "lambda2", "learning_rate", "epochs", "init_scale")
METRIC_GROUPS = ("prediction", "selection", "gates", "stability", "faithfulness", "diversity")
TASK_FOR_KIND = {REGRESSION: REGRESSION, CLASSIFICATION: CLASSIFICATION, SURVIVAL: "cox"}


class StageError(RuntimeError):
    """Wraps a failure with the pipeline stage it happened in."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class DatasetSpec:
    """Either a named generator with keyword parameters or a CSV file with a schema."""

    generator: str | None = None
    params: dict = field(default_factory=dict)
    csv_path: str | None = None
    schema: dict | None = None
    seed: int | None = None
    standardize: bool = False

    def __post_init__(self):
        if (self.generator is None) == (self.csv_path is None):
            raise ConfigError("dataset needs exactly one of generator or csv_path")
        if self.csv_path is not None and self.schema is None:
            raise ConfigError("csv datasets need a schema")


@dataclass
class ExperimentConfig:
    """Everything a run depends on. Component seeds left as None derive from ``seed``."""

    name: str
    dataset: DatasetSpec
    gating: NetworkSpec
    prediction: NetworkSpec
    gates: GateConfig = field(default_factory=GateConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    seed: int = 0
    model_seed: int | None = None
    metrics: list[str] = field(default_factory=lambda: ["prediction", "selection", "gates"])
    grid: dict[str, list] = field(default_factory=dict)
    out_dir: str | None = None

    def __post_init__(self):
        unknown = [m for m in self.metrics if m not in METRIC_GROUPS]
        if unknown:
            raise ConfigError(f"unknown metric groups {unknown}; choose from {METRIC_GROUPS}")
        bad = [k for k in self.grid if k not in GRID_KEYS]
        if bad:
            raise ConfigError(f"unknown grid keys {bad}; choose from {GRID_KEYS}")
        if any(not isinstance(v, list) or not v for v in self.grid.values()):
            raise ConfigError("grid values must be non-empty lists")

    def resolved(self) -> "ExperimentConfig":
        """Copy with every seed written out explicitly."""
        s = self.seed
        return replace(
            self,
            dataset=replace(self.dataset, seed=s if self.dataset.seed is None else self.dataset.seed),
            split=replace(self.split),
            training=replace(self.training),
            model_seed=s if self.model_seed is None else self.model_seed,
        )

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Reseed every component; used by the ``--seed`` override."""
        return replace(
            self,
            seed=seed,
            dataset=replace(self.dataset, seed=None),
            split=replace(self.split, seed=seed),
            training=replace(self.training, seed=seed),
            model_seed=None,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        nested = {
            "dataset": DatasetSpec,
            "gating": NetworkSpec,
            "prediction": NetworkSpec,
            "gates": GateConfig,
            "training": TrainConfig,
            "split": SplitSpec,
        }
        for key, kind in nested.items():
            if key in doc and isinstance(doc[key], dict):
                doc[key] = kind(**doc[key])
        return cls(**doc)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class RunResult:
    config: ExperimentConfig
    model: LspinModel
    metrics: M.MetricReport
    trace: LossTrace
    test: LabeledTable
    test_gates: np.ndarray
    grid_rows: list[dict] = field(default_factory=list)


def _atomic_text(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def load_dataset(spec: DatasetSpec) -> LabeledTable:
    if spec.generator is not None:
        params = dict(spec.params)
        n = params.pop("n", None)
        if params:
            raise ConfigError(f"unsupported generator parameters {sorted(params)}")
        return generate(spec.generator, spec.seed or 0, n)
    return load_csv(spec.csv_path, ColumnSchema.from_dict(spec.schema))


def prepare_splits(config: ExperimentConfig) -> tuple[LabeledTable, LabeledTable, LabeledTable]:
    table = load_dataset(config.dataset)
    tr, va, te = split(table, config.split)
    if config.dataset.standardize:
        _, transform = zscore(tr, np.arange(tr.n))
        tr, va, te = (transform.apply_table(t) for t in (tr, va, te))
    return tr, va, te


def _apply_cell(config: ExperimentConfig, cell: dict) -> ExperimentConfig:
    gates = replace(config.gates, **{k: v for k, v in cell.items() if k in ("lambda1", "lambda2")})
    training = replace(config.training, **{k: v for k, v in cell.items() if k in ("learning_rate", "epochs")})
    gating, prediction = config.gating, config.prediction
    if "init_scale" in cell:
        gating = replace(gating, init_scale=cell["init_scale"])
        prediction = replace(prediction, init_scale=cell["init_scale"])
    return replace(config, gates=gates, training=training, gating=gating, prediction=prediction, grid={})


def grid_cells(grid: dict[str, list]) -> list[dict]:
    if not grid:
        return [{}]
    keys = sorted(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def validation_loss(model: LspinModel, data: LabeledTable) -> float:
    """Classification error, MSE, or the Cox partial likelihood on held-out rows."""
    if model.task == "cox":
        z = explain(model, data.X).gates
        return regularized_loss(model, data.X, data.y, data.event, z=z, train=False).prediction
    pred = predict(model, data.X)
    if model.task == CLASSIFICATION:
        return 1.0 - M.accuracy(pred.values, data.y)
    return M.mse(pred.values, data.y)


def fit(config: ExperimentConfig, train_data: LabeledTable) -> tuple[LspinModel, LossTrace]:
    task = TASK_FOR_KIND[train_data.kind]
    model = init_model(config.gating, config.prediction, config.gates, task, config.model_seed, train_data.d)
    return train(model, train_data, config.training)


def evaluate(
    model: LspinModel, data: LabeledTable, groups: list[str], train_data: LabeledTable | None = None
) -> M.MetricReport:
    """Metrics on ``data`` with deterministic gates."""
    report = M.MetricReport()
    pred = predict(model, data.X)
    gates = pred.gates
    if "prediction" in groups:
        if model.task == "cox":
            report.add("c_index", M.concordance_index(pred.values, data.y, data.event))
        else:
            report.update(M.prediction_metrics(pred.values, data.y, model.task, pred.probabilities))
    if "selection" in groups:
        ex = explain(model, data.X)
        report.add("median_selected", ex.median_count)
        if data.support is not None:
            sel = M.selection_f1(gates > 0, data.support)
            report.update({"f1": sel.f1, "tpr": sel.tpr, "fdr": sel.fdr})
    if "gates" in groups:
        zeros, ones, between = gate_statistics(gates)
        report.update({"pct_gates_0": zeros, "pct_gates_1": ones, "pct_gates_between": between})
        if train_data is not None:
            _, _, train_between = gate_statistics(explain(model, train_data.X).gates)
            report.add("train_pct_gates_between", train_between)
    if "stability" in groups:
        eps = M.default_epsilon(data.X)
        report.add("stability_lipschitz", M.stability_lipschitz(gates, data.X, eps))
        per = M.lipschitz_per_sample(gates, data.X, eps)
        report.add("stability_excluded", int(np.isnan(per).sum()))
    if "faithfulness" in groups and model.task != "cox":
        report.add("faithfulness", M.faithfulness(model, data.X, data.y))
    if "diversity" in groups and model.task == CLASSIFICATION:
        report.add("diversity", M.diversity_score(M.class_feature_sets(gates, data.y)))
    return report


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None) -> RunResult:
    """Run every grid cell, keep the one with the lowest validation loss, evaluate it on test.

    With an output directory this writes metrics.json, gates.csv, loss.csv,
    resolved_config.json and model.json. A failure leaves an INCOMPLETE marker
    naming the stage.
    """
    config = config.resolved()
    out = Path(out_dir or config.out_dir) if (out_dir or config.out_dir) else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "INCOMPLETE").write_text("started\n")
    stage = "config"
    try:
        if out is not None:
            _atomic_text(out / "resolved_config.json", config.to_json() + "\n")
        stage = "data"
        tr, va, te = prepare_splits(config)
        stage = "train"
        best = None
        grid_rows = []
        for cell in grid_cells(config.grid):
            cell_cfg = _apply_cell(config, cell)
            try:
                model, trace = fit(cell_cfg, tr)
            except DivergenceError:
                if len(config.grid) == 0:
                    raise
                grid_rows.append({**cell, "validation_loss": math.inf})
                continue
            score = validation_loss(model, va) if va.n else trace.total[-1]
            grid_rows.append({**cell, "validation_loss": score})
            if best is None or score < best[0]:
                best = (score, cell, model, trace)
        if best is None:
            raise DivergenceError(config.training.epochs, "every grid cell diverged")
        score, cell, model, trace = best
        stage = "evaluate"
        report = evaluate(model, te, config.metrics, tr)
        report.add("validation_loss", score)
        for k, v in sorted(cell.items()):
            report.add(f"selected_{k}", v)
        test_gates = explain(model, te.X).gates
        if out is not None:
            stage = "write"
            report.write(out / "metrics.json")
            _write_sorted_gates(test_gates, te, out / "gates.csv")
            _write_trace(trace, out / "loss.csv")
            save_checkpoint(model, out / "model.json")
            if len(grid_rows) > 1:
                M.write_table_csv(grid_rows, out / "grid.csv")
            (out / "INCOMPLETE").unlink()
        return RunResult(config, model, report, trace, te, test_gates, grid_rows)
    except StageError:
        raise
    except Exception as exc:
        if out is not None:
            (out / "INCOMPLETE").write_text(f"failed at stage {stage}: {exc}\n")
        raise StageError(stage, exc) from exc


def _group_order(table: LabeledTable) -> np.ndarray:
    if table.group is None:
        return np.arange(table.n)
    return np.argsort(table.group, kind="stable")


def _write_sorted_gates(gates: np.ndarray, table: LabeledTable, path: Path) -> None:
    order = _group_order(table)
    write_gate_csv(gates[order], path, table.feature_names, row_ids=[int(i) for i in order])


def _write_trace(trace: LossTrace, path: Path) -> None:
    tmp = path.with_suffix(".csv.tmp")
    with tmp.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "total", "prediction", "l0", "kernel"])
        for row in trace.rows():
            writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    tmp.replace(path)


def export_gates(checkpoint: LspinModel | str | Path, data: LabeledTable, out_path: str | Path) -> np.ndarray:
    """Write deterministic gates for ``data``, rows sorted by ground-truth group."""
    model = checkpoint if isinstance(checkpoint, LspinModel) else load_checkpoint(checkpoint)
    if data.d != model.n_features:
        raise ConfigError(f"checkpoint expects {model.n_features} features, data has {data.d}")
    if TASK_FOR_KIND[data.kind] != model.task:
        raise ConfigError(f"checkpoint task {model.task!r} does not match {data.kind!r} data")
    gates = explain(model, data.X).gates
    order = _group_order(data)
    write_gate_csv(gates[order], out_path, data.feature_names, row_ids=[int(i) for i in order])
    return gates[order]


def varying_train_size_study(
    config: ExperimentConfig,
    sizes: list[int],
    pool: int = 480,
    n_val: int = 60,
    n_test: int = 60,
    out_dir: str | Path | None = None,
) -> list[M.MetricReport]:
    """Train on the first ``size`` rows of a fixed pool; validation and test rows never change."""
    config = config.resolved()
    if not sizes:
        raise ConfigError("no training sizes given")
    too_big = [s for s in sizes if s > pool or s < 1]
    if too_big:
        raise ConfigError(f"sizes {too_big} outside 1..{pool}")
    table = load_dataset(config.dataset)
    if table.n < pool + n_val + n_test:
        raise ConfigError(f"dataset has {table.n} rows, study needs {pool + n_val + n_test}")
    order = np.random.default_rng(config.split.seed).permutation(table.n)
    test = table.subset(np.sort(order[:n_test]))
    pool_idx = order[n_test + n_val : n_test + n_val + pool]
    reports, rows = [], []
    for size in sizes:
        tr = table.subset(np.sort(pool_idx[:size]))
        model, _ = fit(config, tr)
        report = M.MetricReport()
        report.add("train_size", size)
        report.update(evaluate(model, test, ["prediction", "selection"]).values)
        reports.append(report)
        rows.append(report.values)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        M.write_table_csv(rows, out / "study.csv")
        _atomic_text(out / "resolved_config.json", config.to_json() + "\n")
    return reports
