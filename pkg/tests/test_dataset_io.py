import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lspin.dataset_io import (
    ColumnSchema,
    DataFormatError,
    fit_zscore,
    load_csv,
    load_table,
    save_table,
    schema_path,
    zscore,
)
from lspin.errors import ConfigError
from lspin.synthdata import CLASSIFICATION, SURVIVAL, LabeledTable, gen_e4, gen_e5_moving_xor


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_three_row_file(tmp_path):
    path = write(tmp_path / "d.csv", "a,b,label\n1.5,2,0\n-3,4e-2,1\n0,0,1\n")
    table = load_csv(path, ColumnSchema(["a", "b"], CLASSIFICATION, target="label"))
    assert table.n == 3 and table.d == 2
    np.testing.assert_array_equal(table.X, [[1.5, 2.0], [-3.0, 0.04], [0.0, 0.0]])
    assert table.y.tolist() == [0, 1, 1] and table.feature_names == ["a", "b"]


def test_columns_are_selected_by_name(tmp_path):
    path = write(tmp_path / "d.csv", "id,y,b,a,g\nx,1.0,2,3,7\ny,2.0,4,5,8\n")
    table = load_csv(path, ColumnSchema(["a", "b"], target="y", group="g"))
    np.testing.assert_array_equal(table.X, [[3.0, 2.0], [5.0, 4.0]])
    assert table.group.tolist() == [7, 8]


def test_survival_columns(tmp_path):
    path = write(tmp_path / "s.csv", "f,t,e\n0.1,5,1\n0.2,3,0\n")
    table = load_csv(path, ColumnSchema(["f"], SURVIVAL, time="t", event="e"))
    assert table.kind == SURVIVAL and table.y.tolist() == [5.0, 3.0] and table.event.tolist() == [True, False]


@pytest.mark.parametrize(
    "body,row,column",
    [
        ("a,y\n1,2\nNaN,3\n", 1, "a"),
        ("a,y\n1,2\n3,\n", 1, "y"),
        ("a,y\n1,inf\n", 0, "y"),
        ("a,y\n1,2\n2,3\nabc,4\n", 2, "a"),
    ],
)
def test_bad_cells_name_row_and_column(tmp_path, body, row, column):
    path = write(tmp_path / "d.csv", body)
    with pytest.raises(DataFormatError) as info:
        load_csv(path, ColumnSchema(["a"], target="y"))
    assert f"row {row}" in str(info.value) and repr(column) in str(info.value)


def test_structural_errors(tmp_path):
    schema = ColumnSchema(["a"], target="y")
    with pytest.raises(DataFormatError, match="lacks columns"):
        load_csv(write(tmp_path / "m.csv", "a,z\n1,2\n"), schema)
    with pytest.raises(DataFormatError, match="empty"):
        load_csv(write(tmp_path / "e.csv", ""), schema)
    with pytest.raises(DataFormatError, match="row 0"):
        load_csv(write(tmp_path / "r.csv", "a,y\n1,2,3\n"), schema)
    with pytest.raises(FileNotFoundError):
        load_csv(tmp_path / "nope.csv", schema)
    with pytest.raises(DataFormatError, match="class labels"):
        load_csv(write(tmp_path / "c.csv", "a,y\n1,0.5\n"), ColumnSchema(["a"], CLASSIFICATION, target="y"))


@pytest.mark.parametrize(
    "kwargs",
    [
        {"features": []},
        {"features": ["a"]},
        {"features": ["a"], "target": "y", "time": "t"},
        {"features": ["a"], "kind": SURVIVAL, "time": "t"},
        {"features": ["a"], "target": "a"},
        {"features": ["a", "b"], "target": "y", "support": ["s"]},
        {"features": ["a"], "kind": "ordinal", "target": "y"},
    ],
)
def test_schema_validation(kwargs):
    with pytest.raises(ConfigError):
        ColumnSchema(**kwargs)


def test_e4_round_trip_is_bit_exact(tmp_path):
    table = gen_e4(500, seed=3)
    save_table(table, tmp_path / "e4.csv")
    assert schema_path(tmp_path / "e4.csv").is_file()
    back = load_table(tmp_path / "e4.csv")
    np.testing.assert_array_equal(back.X, table.X)
    np.testing.assert_array_equal(back.y, table.y)
    np.testing.assert_array_equal(back.support, table.support)
    np.testing.assert_array_equal(back.group, table.group)
    assert back.kind == CLASSIFICATION


def test_regression_and_survival_round_trip(tmp_path):
    e5 = gen_e5_moving_xor(10, seed=0)
    save_table(e5, tmp_path / "e5.csv")
    np.testing.assert_array_equal(load_table(tmp_path / "e5.csv").y, e5.y)
    rng = np.random.default_rng(1)
    surv = LabeledTable(rng.normal(size=(6, 2)), rng.uniform(0, 9, 6), kind=SURVIVAL, event=rng.random(6) < 0.5)
    save_table(surv, tmp_path / "s.csv")
    back = load_table(tmp_path / "s.csv")
    np.testing.assert_array_equal(back.y, surv.y)
    np.testing.assert_array_equal(back.event, surv.event)
    assert json.loads(schema_path(tmp_path / "s.csv").read_text())["kind"] == SURVIVAL


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(allow_nan=False, allow_infinity=False, width=64)))
def test_round_trip_any_finite_double(tmp_path_factory, X):
    path = tmp_path_factory.mktemp("rt") / "x.csv"
    save_table(LabeledTable(X, X[:, 0].copy()), path)
    np.testing.assert_array_equal(load_table(path).X, X)


def test_missing_sidecar(tmp_path):
    write(tmp_path / "d.csv", "a,y\n1,2\n")
    with pytest.raises(FileNotFoundError):
        load_table(tmp_path / "d.csv")


# standardization


def test_zscore_fit_rows_are_standardized():
    rng = np.random.default_rng(4)
    table = LabeledTable(rng.normal(5, 3, size=(100, 3)), np.zeros(100))
    fit = np.arange(70)
    out, transform = zscore(table, fit)
    np.testing.assert_allclose(out.X[fit].mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.X[fit].std(axis=0), 1.0, rtol=1e-12)
    assert not transform.constant.any()


def test_zscore_constant_column_is_flagged_and_zeroed():
    X = np.column_stack([np.full(10, 2.5), np.arange(10.0)])
    out, transform = zscore(LabeledTable(X, np.zeros(10)), np.arange(10))
    assert transform.constant.tolist() == [True, False]
    assert np.all(out.X[:, 0] == 0.0)


def test_zscore_train_fit_differs_from_refit_on_shifted_test():
    rng = np.random.default_rng(5)
    train = rng.normal(0, 1, size=(200, 2))
    test = rng.normal(3, 2, size=(50, 2))
    train_fit = fit_zscore(train).apply(test)
    refit = fit_zscore(test).apply(test)
    # two-pass oracle: statistics computed by hand from the training rows only
    np.testing.assert_allclose(train_fit, (test - train.mean(axis=0)) / train.std(axis=0))
    assert not np.allclose(train_fit, refit)
    assert abs(train_fit.mean()) > 1.0


def test_zscore_ignores_rows_outside_fit_set():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(40, 3))
    fit = np.arange(30)
    _, before = zscore(LabeledTable(X, np.zeros(40)), fit)
    mutated = X.copy()
    mutated[30:] = rng.normal(100, 50, size=(10, 3))
    _, after = zscore(LabeledTable(mutated, np.zeros(40)), fit)
    np.testing.assert_array_equal(before.mean, after.mean)
    np.testing.assert_array_equal(before.std, after.std)


def test_zscore_errors():
    table = LabeledTable(np.ones((3, 2)), np.zeros(3))
    with pytest.raises(ConfigError):
        zscore(table, [])
    with pytest.raises(ConfigError):
        fit_zscore(np.ones((3, 2))).apply(np.ones((2, 3)))
