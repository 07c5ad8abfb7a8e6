"""CSV ingestion with a JSON schema sidecar, and train-fit z-scoring."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .synthdata import CLASSIFICATION, REGRESSION, SURVIVAL, LabeledTable


class DataFormatError(ValueError):
    """A CSV file that cannot be turned into a table under the given schema."""


@dataclass
class ColumnSchema:
    """Column roles in a CSV file.

    Regression and classification tables name a ``target`` column. Survival
    tables name ``time`` and ``event`` columns instead.
    """

    features: list[str]
    kind: str = REGRESSION
    target: str | None = None
    time: str | None = None
    event: str | None = None
    group: str | None = None
    support: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.features = list(self.features)
        self.support = list(self.support)
        if not self.features:
            raise ConfigError("schema needs at least one feature column")
        if self.kind not in (REGRESSION, CLASSIFICATION, SURVIVAL):
            raise ConfigError(f"unknown table kind {self.kind!r}")
        if self.kind == SURVIVAL:
            if self.target is not None or self.time is None or self.event is None:
                raise ConfigError("survival schema needs time and event columns and no target")
        elif self.target is None or self.time is not None or self.event is not None:
            raise ConfigError(f"{self.kind} schema needs exactly one target column")
        if self.support and len(self.support) != len(self.features):
            raise ConfigError("support columns must pair one-to-one with features")
        used = self.columns()
        dupes = sorted({c for c in used if used.count(c) > 1})
        if dupes:
            raise ConfigError(f"columns used more than once: {dupes}")

    def columns(self) -> list[str]:
        roles = [self.target, self.time, self.event, self.group]
        return self.features + [c for c in roles if c is not None] + self.support

    @classmethod
    def from_dict(cls, doc: dict) -> "ColumnSchema":
        return cls(**doc)


def _parse(value: str, row: int, column: str) -> float:
    try:
        x = float(value)
    except ValueError:
        raise DataFormatError(f"row {row}, column {column!r}: cannot parse {value!r} as a number") from None
    if not math.isfinite(x):
        raise DataFormatError(f"row {row}, column {column!r}: non-finite value {value!r}")
    return x


def load_csv(path: str | Path, schema: ColumnSchema) -> LabeledTable:
    """Read a header-first CSV. Rows are numbered from 0 after the header."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such data file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path} is empty") from None
        except csv.Error as exc:
            raise DataFormatError(f"{path}: {exc}") from None
        missing = [c for c in schema.columns() if c not in header]
        if missing:
            raise DataFormatError(f"{path} lacks columns {missing}")
        pos = {name: header.index(name) for name in schema.columns()}
        values = {name: [] for name in schema.columns()}
        try:
            for r, row in enumerate(reader):
                if len(row) != len(header):
                    raise DataFormatError(f"row {r}: expected {len(header)} cells, found {len(row)}")
                for name, j in pos.items():
                    if row[j].strip() == "":
                        raise DataFormatError(f"row {r}, column {name!r}: missing value")
                    values[name].append(_parse(row[j], r, name))
        except csv.Error as exc:
            raise DataFormatError(f"{path}: {exc}") from None

    n = len(values[schema.features[0]])
    col = lambda name: np.array(values[name], dtype=np.float64).reshape(n)  # noqa: E731
    X = np.column_stack([col(f) for f in schema.features]) if n else np.zeros((0, len(schema.features)))
    if schema.kind == SURVIVAL:
        y, event = col(schema.time), col(schema.event) != 0.0
    else:
        y, event = col(schema.target), None
        if schema.kind == CLASSIFICATION:
            if np.any(y != np.round(y)) or np.any(y < 0):
                raise DataFormatError(f"column {schema.target!r}: class labels must be non-negative integers")
            y = y.astype(np.int64)
    group = col(schema.group).astype(np.int64) if schema.group else None
    support = np.column_stack([col(s) != 0.0 for s in schema.support]) if schema.support and n else None
    return LabeledTable(
        X=X, y=y, kind=schema.kind, event=event, support=support, group=group,
        feature_names=list(schema.features),
    )


def schema_path(csv_path: str | Path) -> Path:
    return Path(csv_path).with_suffix(".schema.json")


def save_table(table: LabeledTable, path: str | Path) -> ColumnSchema:
    """Write ``table`` as CSV plus a schema sidecar; floats use shortest round-trip text."""
    path = Path(path)
    names = list(table.feature_names)
    support = [f"support_{f}" for f in names] if table.support is not None else []
    group = "group" if table.group is not None else None
    if table.kind == SURVIVAL:
        schema = ColumnSchema(names, SURVIVAL, time="time", event="event", group=group, support=support)
    else:
        schema = ColumnSchema(names, table.kind, target="y", group=group, support=support)

    def cells(i: int) -> list[str]:
        row = [repr(float(v)) for v in table.X[i]]
        if table.kind == SURVIVAL:
            row += [repr(float(table.y[i])), str(int(table.event[i]))]
        elif table.kind == CLASSIFICATION:
            row.append(str(int(table.y[i])))
        else:
            row.append(repr(float(table.y[i])))
        if table.group is not None:
            row.append(str(int(table.group[i])))
        if table.support is not None:
            row += [str(int(b)) for b in table.support[i]]
        return row

    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(schema.columns())
        for i in range(table.n):
            writer.writerow(cells(i))
    tmp.replace(path)
    side = schema_path(path)
    tmp = side.with_suffix(".tmp")
    tmp.write_text(json.dumps(asdict(schema), indent=2) + "\n")
    tmp.replace(side)
    return schema


def load_table(path: str | Path) -> LabeledTable:
    """Inverse of :func:`save_table`."""
    side = schema_path(path)
    if not side.is_file():
        raise FileNotFoundError(f"missing schema sidecar {side}")
    schema = ColumnSchema.from_dict(json.loads(side.read_text()))
    return load_csv(path, schema)


@dataclass
class ZScore:
    """Column statistics fitted on a subset; constant columns map to 0."""

    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.mean.shape[0]:
            raise ConfigError(f"transform fitted on {self.mean.shape[0]} columns, got {X.shape[1]}")
        scale = np.where(self.constant, 1.0, self.std)
        return np.where(self.constant, 0.0, (X - self.mean) / scale)

    def apply_table(self, table: LabeledTable) -> LabeledTable:
        return replace(table, X=self.apply(table.X), feature_names=list(table.feature_names))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "constant": self.constant.tolist()}


def fit_zscore(X: np.ndarray) -> ZScore:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise ConfigError("z-score fit set is empty")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    return ZScore(mean, std, std == 0.0)


def zscore(table: LabeledTable, fit_on) -> tuple[LabeledTable, ZScore]:
    """Standardize every row of ``table`` with statistics from rows ``fit_on`` only."""
    idx = np.asarray(fit_on, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise ConfigError("z-score fit set is empty")
    transform = fit_zscore(table.X[idx])
    return transform.apply_table(table), transform
