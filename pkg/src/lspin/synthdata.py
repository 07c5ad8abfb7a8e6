"""Seeded synthetic data models with per-sample ground-truth supports.

Feature indices in supports are stored as a boolean N x D mask; the
docstrings below use 1-based feature numbers.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError

REGRESSION = "regression"
CLASSIFICATION = "classification"
SURVIVAL = "survival"


@dataclass
class LabeledTable:
    X: np.ndarray
    y: np.ndarray
    kind: str = REGRESSION
    event: np.ndarray | None = None
    support: np.ndarray | None = None
    group: np.ndarray | None = None
    feature_names: list[str] = field(default_factory=list)
    n_classes: int | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise ValueError("X must be 2-d")
        if not np.isfinite(self.X).all():
            raise ValueError("X contains non-finite values")
        if self.kind == CLASSIFICATION:
            self.y = np.asarray(self.y, dtype=np.int64)
            if self.n_classes is None:
                self.n_classes = int(self.y.max()) + 1 if self.y.size else 0
        else:
            self.y = np.asarray(self.y, dtype=np.float64)
        if self.event is not None:
            self.event = np.asarray(self.event, dtype=bool)
        if self.support is not None:
            self.support = np.asarray(self.support, dtype=bool)
        if self.group is not None:
            self.group = np.asarray(self.group, dtype=np.int64)
        if not self.feature_names:
            self.feature_names = [f"x{d + 1}" for d in range(self.X.shape[1])]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "LabeledTable":
        idx = np.asarray(idx, dtype=np.int64)
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return replace(
            self,
            X=self.X[idx],
            y=self.y[idx],
            event=pick(self.event),
            support=pick(self.support),
            group=pick(self.group),
            feature_names=list(self.feature_names),
        )


@dataclass
class SplitSpec:
    """Train/val/test sizes as fractions (floats) or row counts (ints)."""

    train: float | int = 0.8
    val: float | int = 0.1
    test: float | int = 0.1
    seed: int = 0
    shuffle: bool = True


def _two_gaussian_groups(rng, n_per_group: int, dim: int) -> np.ndarray:
    std = np.sqrt(0.5)
    g1 = rng.normal(1.0, std, size=(n_per_group, dim))
    g2 = rng.normal(-1.0, std, size=(n_per_group, dim))
    return np.vstack([g1, g2])


def _linear(n_per_group: int, seed: int, x3_coef_group2: float) -> LabeledTable:
    if n_per_group < 1:
        raise ConfigError("n_per_group must be >= 1")
    rng = np.random.default_rng(seed)
    X = _two_gaussian_groups(rng, n_per_group, 5)
    group = np.repeat([0, 1], n_per_group)
    g1 = group == 0
    y = np.where(
        g1,
        -2.0 * X[:, 0] + X[:, 1] - 0.5 * X[:, 2],
        x3_coef_group2 * X[:, 2] + X[:, 3] - 2.0 * X[:, 4],
    )
    support = np.zeros(X.shape, dtype=bool)
    support[g1, 0:3] = True
    support[~g1, 2:5] = True
    return LabeledTable(X=X, y=y, kind=REGRESSION, support=support, group=group)


def gen_linear_two_group(n_per_group: int = 300, seed: int = 0) -> LabeledTable:
    """Group 1 ~ N(+1, 0.5 I): y = -2 x1 + x2 - 0.5 x3; group 2 ~ N(-1, 0.5 I): y = -0.5 x3 + x4 - 2 x5."""
    return _linear(n_per_group, seed, -0.5)


def gen_linear_unequal(n_per_group: int = 300, seed: int = 0) -> LabeledTable:
    """As :func:`gen_linear_two_group` but group 2 uses +0.5 x3."""
    return _linear(n_per_group, seed, 0.5)


def _label(exponent: np.ndarray) -> np.ndarray:
    # strict '>' so a logit of exactly 1 maps to class 0
    logit = np.exp(exponent)
    return (1.0 / (1.0 + logit) > 0.5).astype(np.int64)


def _xor_exponent(X):
    return X[:, 0] * X[:, 1]


def _orange_exponent(X):
    return np.sum(X[:, 2:6] ** 2, axis=1) - 4.0


def _additive_exponent(X):
    return -10.0 * np.sin(0.2 * X[:, 6]) + np.abs(X[:, 7]) + X[:, 8] + np.exp(-X[:, 9]) - 2.4


_E123 = {
    "E1": ((_xor_exponent, [1, 2]), (_orange_exponent, [3, 4, 5, 6])),
    "E2": ((_xor_exponent, [1, 2]), (_additive_exponent, [7, 8, 9, 10])),
    "E3": ((_orange_exponent, [3, 4, 5, 6]), (_additive_exponent, [7, 8, 9, 10])),
}


def _switch_on_x11(X, first, second) -> LabeledTable:
    (f_neg, s_neg), (f_pos, s_pos) = first, second
    neg = X[:, 10] < 0
    y = np.where(neg, _label(f_neg(X)), _label(f_pos(X)))
    support = np.zeros(X.shape, dtype=bool)
    support[np.ix_(neg, [f - 1 for f in s_neg + [11]])] = True
    support[np.ix_(~neg, [f - 1 for f in s_pos + [11]])] = True
    return LabeledTable(
        X=X, y=y, kind=CLASSIFICATION, support=support, group=(~neg).astype(np.int64), n_classes=2
    )


def gen_e123(variant: str, n: int = 2000, seed: int = 0) -> LabeledTable:
    """11 standard-normal features; the sign of x11 picks which logit applies."""
    variant = variant.upper()
    if variant not in _E123:
        raise ConfigError(f"unknown variant {variant!r}")
    if n < 1:
        raise ConfigError("n must be >= 1")
    X = np.random.default_rng(seed).standard_normal((n, 11))
    first, second = _E123[variant]
    return _switch_on_x11(X, first, second)


def gen_e1_overlap(n: int = 6000, seed: int = 0) -> LabeledTable:
    """E1 with exp(x1 x3) in the x11 < 0 branch, so x3 and x11 are shared."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    X = np.random.default_rng(seed).standard_normal((n, 11))
    return _switch_on_x11(X, (lambda X: X[:, 0] * X[:, 2], [1, 3]), (_orange_exponent, [3, 4, 5, 6]))


def gen_e4(n_per_group: int = 500, seed: int = 0) -> LabeledTable:
    """4 group-shifted signal features plus 46 N(0, 0.5 I) nuisance features."""
    if n_per_group < 1:
        raise ConfigError("n_per_group must be >= 1")
    rng = np.random.default_rng(seed)
    signal = _two_gaussian_groups(rng, n_per_group, 4)
    nuisance = rng.normal(0.0, np.sqrt(0.5), size=(2 * n_per_group, 46))
    X = np.hstack([signal, nuisance])
    group = np.repeat([0, 1], n_per_group)
    g1 = group == 0
    exponent = np.where(g1, X[:, 0] * X[:, 1] - 0.9, X[:, 2] ** 2 + X[:, 3] ** 2 - 2.5)
    support = np.zeros(X.shape, dtype=bool)
    support[g1, 0:2] = True
    support[~g1, 2:4] = True
    return LabeledTable(
        X=X, y=_label(exponent), kind=CLASSIFICATION, support=support, group=group, n_classes=2
    )


def gen_e5_moving_xor(n_per_group: int = 700, seed: int = 0) -> LabeledTable:
    """20 fair +-1 features and a block indicator x21 in {-1, 0, 1}.

    y = x1 x2 + 2 x21, x2 x3 + 2 x21 or x3 x4 + 2 x21 depending on the block.
    """
    if n_per_group < 1:
        raise ConfigError("n_per_group must be >= 1")
    rng = np.random.default_rng(seed)
    bits = rng.choice(np.array([-1.0, 1.0]), size=(3 * n_per_group, 20))
    block = np.repeat([-1.0, 0.0, 1.0], n_per_group)
    X = np.hstack([bits, block[:, None]])
    first = (block + 1).astype(np.int64)  # 0, 1, 2 -> pair (x1,x2), (x2,x3), (x3,x4)
    rows = np.arange(X.shape[0])
    y = X[rows, first] * X[rows, first + 1] + 2.0 * block
    support = np.zeros(X.shape, dtype=bool)
    support[rows, first] = True
    support[rows, first + 1] = True
    support[:, 20] = True
    return LabeledTable(X=X, y=y, kind=REGRESSION, support=support, group=first)


def _sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    parts = (spec.train, spec.val, spec.test)
    if any(p < 0 for p in parts):
        raise ConfigError("split sizes must be non-negative")
    if all(isinstance(p, (int, np.integer)) and not isinstance(p, bool) for p in parts) and sum(parts) > 1:
        n_tr, n_va, n_te = (int(p) for p in parts)
        if n_tr + n_va + n_te > n:
            raise ConfigError(f"split counts exceed {n} rows")
        return n_tr, n_va, n_te
    if sum(parts) > 1.0 + 1e-9:
        raise ConfigError("split fractions sum to more than 1")
    n_va = int(round(spec.val * n))
    n_te = int(round(spec.test * n))
    if abs(sum(parts) - 1.0) <= 1e-9:
        n_tr = n - n_va - n_te
    else:
        n_tr = int(round(spec.train * n))
    return n_tr, n_va, n_te


def split(table: LabeledTable, spec: SplitSpec) -> tuple[LabeledTable, LabeledTable, LabeledTable]:
    """Disjoint seed-deterministic train/val/test subsets."""
    n_tr, n_va, n_te = _sizes(table.n, spec)
    for name, size, asked in (("train", n_tr, spec.train), ("val", n_va, spec.val), ("test", n_te, spec.test)):
        if asked and size == 0:
            raise ConfigError(f"{name} split is empty")
    if n_tr == 0:
        raise ConfigError("train split is empty")
    order = np.random.default_rng(spec.seed).permutation(table.n) if spec.shuffle else np.arange(table.n)
    tr = order[:n_tr]
    va = order[n_tr : n_tr + n_va]
    te = order[n_tr + n_va : n_tr + n_va + n_te]
    return table.subset(np.sort(tr)), table.subset(np.sort(va)), table.subset(np.sort(te))


GENERATORS = {
    "linear": lambda seed, n=300: gen_linear_two_group(n, seed),
    "linear_unequal": lambda seed, n=300: gen_linear_unequal(n, seed),
    "E1": lambda seed, n=2000: gen_e123("E1", n, seed),
    "E2": lambda seed, n=2000: gen_e123("E2", n, seed),
    "E3": lambda seed, n=2000: gen_e123("E3", n, seed),
    "E1_overlap": lambda seed, n=6000: gen_e1_overlap(n, seed),
    "E4": lambda seed, n=500: gen_e4(n, seed),
    "E5": lambda seed, n=700: gen_e5_moving_xor(n, seed),
}


def generate(name: str, seed: int, n: int | None = None) -> LabeledTable:
    if name not in GENERATORS:
        raise ConfigError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}")
    fn = GENERATORS[name]
    return fn(seed) if n is None else fn(seed, n)
