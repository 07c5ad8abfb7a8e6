import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from lspin.autodiff import ShapeError, Tape, Tensor, finite_diff_check
from lspin.errors import ConfigError, DegenerateDataError, DivergenceError, SpecError
from lspin.gates import GateConfig
from lspin.model import (
    NetworkSpec,
    TrainConfig,
    cox_partial_likelihood,
    compute_loss,
    explain,
    explanation_from_gates,
    gating_spec,
    init_model,
    load_checkpoint,
    predict,
    regularized_loss,
    save_checkpoint,
    train,
)
from lspin.synthdata import CLASSIFICATION, REGRESSION, SURVIVAL, LabeledTable, gen_e123, gen_e4


def brute_force_cox(risk, times, events):
    """Negative log partial likelihood by explicit risk-set enumeration (Breslow)."""
    total = 0.0
    for i in range(len(times)):
        if not events[i]:
            continue
        at_risk = [j for j in range(len(times)) if times[j] >= times[i]]
        total -= risk[i] - math.log(sum(math.exp(risk[j]) for j in at_risk))
    return total / sum(bool(e) for e in events)


def regression_model(d=3, hidden=(4,), act="tanh", s=0.1, gate_bias=None, seed=0, **gate_kwargs):
    model = init_model(
        gating_spec(d, [4], s),
        NetworkSpec(list(hidden) + [1], act, "identity", s),
        GateConfig(**gate_kwargs),
        REGRESSION,
        seed,
    )
    if gate_bias is not None:
        model.gating.biases[-1].data[:] = gate_bias
    return model


# initialization


def test_zero_scale_gives_half_open_gates():
    model = regression_model(d=5, s=0.0)
    assert all(np.all(p.data == 0) for p in model.parameters())
    X = np.random.default_rng(0).normal(size=(7, 5))
    assert np.all(predict(model, X).gates == 0.5)


def test_seeded_initialization_is_bit_identical():
    a, b = regression_model(seed=3), regression_model(seed=3)
    for p, q in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(p.data, q.data)
    c = regression_model(seed=4)
    assert not np.array_equal(a.parameters()[0].data, c.parameters()[0].data)


def test_weight_scale_statistics():
    model = init_model(
        gating_spec(784, [128]), NetworkSpec([2]), GateConfig(), CLASSIFICATION, seed=0
    )
    w = model.gating.weights[0].data
    assert w.size >= 100_000
    assert 0.095 <= w.std() <= 0.105
    assert all(np.all(b.data == 0) for b in model.gating.biases + model.prediction.biases)


def test_xavier_style_scale():
    model = init_model(
        gating_spec(400, [300], None), NetworkSpec([2]), GateConfig(), CLASSIFICATION, seed=0
    )
    assert model.gating.weights[0].data.std() == pytest.approx(1 / 20, rel=0.02)


@pytest.mark.parametrize(
    "gating,prediction,task",
    [
        (gating_spec(4, [3]), NetworkSpec([1]), REGRESSION),  # gating width != D
        (NetworkSpec([3], "tanh", "identity"), NetworkSpec([1]), REGRESSION),
        (gating_spec(3, [3]), NetworkSpec([2]), REGRESSION),
        (gating_spec(3, [3]), NetworkSpec([1]), CLASSIFICATION),
        (gating_spec(3, [3]), NetworkSpec([1]), "ranking"),
    ],
)
def test_init_rejects_incompatible_specs(gating, prediction, task):
    with pytest.raises(SpecError):
        init_model(gating, prediction, GateConfig(), task, 0, n_features=3)


def test_network_spec_validation():
    with pytest.raises(SpecError):
        NetworkSpec([])
    with pytest.raises(ValueError):
        NetworkSpec([2], "sigmoid")


# losses


def test_perfect_regression_loss_is_zero():
    model = regression_model(d=2, s=0.0, lambda1=0.0)
    X = np.random.default_rng(1).normal(size=(5, 2))
    batch = LabeledTable(X, np.zeros(5))
    assert compute_loss(model, batch, z=np.ones((5, 2))).item() == 0.0


def test_uniform_logits_cross_entropy():
    model = init_model(gating_spec(3, [2], 0.0), NetworkSpec([2], init_scale=0.0), GateConfig(lambda1=0.0), CLASSIFICATION, 0)
    batch = LabeledTable(np.ones((4, 3)), np.array([0, 1, 0, 1]), kind=CLASSIFICATION)
    assert compute_loss(model, batch, z=np.ones((4, 3))).item() == pytest.approx(math.log(2), abs=1e-15)


def test_open_gate_penalty_is_d_times_phi_three():
    d = 6
    model = regression_model(d=d, s=0.0, gate_bias=50.0, lambda1=1.0)
    X = np.zeros((4, d))
    parts = regularized_loss(model, X, np.zeros(4), z=np.ones((4, d)))
    assert parts.prediction == 0.0
    assert parts.l0 == pytest.approx(d * norm.cdf(3.0), rel=1e-12)
    assert parts.l0 == pytest.approx(d * 0.99865, rel=1e-5)
    assert parts.total.item() == pytest.approx(parts.l0)


def test_cox_simple_cases():
    assert cox_partial_likelihood([0.3, 0.3], [1.0, 2.0], [True, False]).item() == pytest.approx(math.log(2))
    assert cox_partial_likelihood([0.7, -1.2], [1.0, 2.0], [False, True]).item() == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(DegenerateDataError):
        cox_partial_likelihood([0.1, 0.2], [1.0, 2.0], [False, False])


@pytest.mark.parametrize(
    "risk,times,events",
    [
        ([0.4, -1.1, 2.0, 0.3], [5.0, 2.0, 7.5, 1.0], [1, 1, 0, 1]),
        ([0.1, 0.9, -0.4, 1.7, -2.2, 0.0], [3.0, 1.0, 4.0, 2.0, 6.0, 5.0], [1, 0, 1, 1, 1, 0]),
        ([0.5, -0.5, 1.0, 0.2, 0.2, -1.0], [2.0, 2.0, 3.0, 1.0, 3.0, 4.0], [1, 1, 0, 1, 1, 1]),
    ],
)
def test_cox_matches_enumeration(risk, times, events):
    got = cox_partial_likelihood(risk, times, events).item()
    assert abs(got - brute_force_cox(risk, times, events)) <= 1e-10


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(2, 8),
    seed=st.integers(0, 10_000),
    tied=st.booleans(),
)
def test_cox_property_against_enumeration(n, seed, tied):
    rng = np.random.default_rng(seed)
    risk = rng.normal(size=n) * 2
    times = rng.integers(1, 4, size=n).astype(float) if tied else rng.permutation(n).astype(float)
    events = rng.random(n) < 0.7
    events[0] = True
    assert abs(cox_partial_likelihood(risk, times, events).item() - brute_force_cox(risk, times, events)) <= 1e-10


def test_cox_gradient():
    rng = np.random.default_rng(2)
    risk = Tensor(rng.normal(size=(6, 1)), requires_grad=True)
    times = np.array([3.0, 1.0, 3.0, 2.0, 6.0, 5.0])
    events = np.array([1, 1, 1, 0, 1, 0], dtype=bool)
    assert finite_diff_check(lambda: cox_partial_likelihood(risk, times, events), [risk]) <= 1e-6


def test_full_loss_gradient_with_both_regularizers():
    table = gen_e123("E1", n=5, seed=0)
    model = init_model(
        gating_spec(11, [8], 0.3),
        NetworkSpec([6, 2], "tanh", "identity", 0.3, use_batch_norm=True),
        GateConfig(lambda1=0.5, lambda2=0.2, kernel_mode="stability"),
        CLASSIFICATION,
        seed=1,
    )
    noise = 0.5 * np.random.default_rng(3).standard_normal((5, 11))
    pre = model.gating(Tensor(table.X)).data + 0.5 + noise
    assert np.min(np.minimum(np.abs(pre), np.abs(pre - 1))) > 10 * 1e-5
    loss = lambda: regularized_loss(model, table.X, table.y, noise=noise).total  # noqa: E731
    assert finite_diff_check(loss, model.parameters()) <= 1e-4


def test_diversity_regularizer_gradient():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(5, 4))
    model = regression_model(d=4, s=0.3, lambda1=0.1, lambda2=0.3, kernel_mode="diversity")
    noise = 0.5 * rng.standard_normal((5, 4))
    loss = lambda: regularized_loss(model, X, X[:, 0], noise=noise).total  # noqa: E731
    assert finite_diff_check(loss, model.parameters()) <= 1e-4


def test_cox_model_loss_gradient():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(6, 3))
    model = init_model(gating_spec(3, [4], 0.3), NetworkSpec([4, 1], init_scale=0.3), GateConfig(lambda1=0.2), "cox", 0)
    times, events = rng.uniform(1, 5, 6), np.array([1, 0, 1, 1, 0, 1], dtype=bool)
    noise = 0.5 * rng.standard_normal((6, 3))
    loss = lambda: regularized_loss(model, X, times, events, noise=noise).total  # noqa: E731
    # the partial likelihood ignores a common shift of the risk scores, so the
    # output bias has zero gradient and a relative error would compare noise
    out_bias = model.prediction.biases[-1]
    params = [p for p in model.parameters() if p is not out_bias]
    assert finite_diff_check(loss, params) <= 1e-4
    with Tape() as tape:
        total = loss()
    assert abs(tape.gradient(total, [out_bias])[0][0]) <= 1e-12


# training


def test_zero_epochs_leave_model_unchanged():
    model = regression_model()
    before = [p.data.copy() for p in model.parameters()]
    X = np.random.default_rng(6).normal(size=(8, 3))
    _, trace = train(model, LabeledTable(X, X[:, 0]), TrainConfig(epochs=0))
    assert trace.total == []
    for p, q in zip(model.parameters(), before):
        np.testing.assert_array_equal(p.data, q)


def test_linear_neuron_learns_slope_three():
    model = init_model(
        gating_spec(1, [1], 0.0),
        NetworkSpec([1], "identity", "identity", 0.0),
        GateConfig(sigma=1e-3, lambda1=0.0),
        REGRESSION,
        0,
    )
    model.gating.biases[-1].data[:] = 50.0
    x = np.linspace(-1, 1, 21)[:, None]
    train(model, LabeledTable(x, 3 * x[:, 0]), TrainConfig(epochs=500, learning_rate=0.5))
    # closed-form least squares through the origin
    slope = float(x[:, 0] @ (3 * x[:, 0]) / (x[:, 0] @ x[:, 0]))
    assert abs(model.prediction.weights[0].data[0, 0] - slope) <= 1e-3


def test_training_is_seed_deterministic():
    data = gen_e4(20, seed=0)
    runs = []
    for _ in range(2):
        model = init_model(gating_spec(50, [8]), NetworkSpec([8, 2], use_batch_norm=True), GateConfig(lambda1=0.05), CLASSIFICATION, 7)
        _, trace = train(model, data, TrainConfig(epochs=15, batch_size=16, learning_rate=0.1, seed=9))
        runs.append((model, trace))
    for p, q in zip(runs[0][0].parameters(), runs[1][0].parameters()):
        np.testing.assert_array_equal(p.data, q.data)
    assert runs[0][1].total == runs[1][1].total


def test_training_reduces_loss():
    data = gen_e4(50, seed=1)
    model = init_model(gating_spec(50, [16]), NetworkSpec([16, 2]), GateConfig(lambda1=0.01), CLASSIFICATION, 0)
    _, trace = train(model, data, TrainConfig(epochs=60, learning_rate=0.2))
    assert trace.total[-1] < trace.total[0]
    assert len(list(trace.rows())) == 60


def test_divergence_reports_epoch():
    x = np.linspace(-10, 10, 30)[:, None]
    model = init_model(gating_spec(1, [2]), NetworkSpec([8, 1], "identity"), GateConfig(lambda1=0.0), REGRESSION, 0)
    with np.errstate(all="ignore"), pytest.raises(DivergenceError) as info:
        train(model, LabeledTable(x, 1e3 * x[:, 0]), TrainConfig(epochs=200, learning_rate=10.0))
    assert info.value.epoch >= 1


def test_training_rejects_mismatched_data():
    model = regression_model()
    with pytest.raises(ConfigError):
        train(model, LabeledTable(np.ones((3, 3)), [0, 1, 0], kind=CLASSIFICATION), TrainConfig(epochs=1))
    with pytest.raises(ShapeError):
        train(model, LabeledTable(np.ones((3, 2)), np.ones(3)), TrainConfig(epochs=1))
    with pytest.raises(ConfigError):
        train(model, LabeledTable(np.ones((0, 3)), np.ones(0)), TrainConfig(epochs=1))


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=-1)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


def test_cox_training_runs_with_eventless_batches():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(20, 3))
    events = np.zeros(20, dtype=bool)
    events[:4] = True
    data = LabeledTable(X, rng.uniform(1, 9, 20), kind=SURVIVAL, event=events)
    model = init_model(gating_spec(3, [4]), NetworkSpec([4, 1]), GateConfig(), "cox", 0)
    _, trace = train(model, data, TrainConfig(epochs=5, batch_size=3))
    assert all(np.isfinite(trace.total))


# inference


def test_predict_is_deterministic_and_checks_width():
    model = regression_model(s=0.5)
    X = np.random.default_rng(9).normal(size=(6, 3))
    a, b = predict(model, X), predict(model, X)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.gates, b.gates)
    with pytest.raises(ShapeError):
        predict(model, np.ones((2, 4)))


def test_closed_gates_give_constant_prediction():
    model = regression_model(s=0.5, gate_bias=-50.0)
    X = np.random.default_rng(10).normal(size=(9, 3))
    out = predict(model, X)
    assert np.all(out.gates == 0.0)
    np.testing.assert_array_equal(out.values, np.full(9, out.values[0]))
    assert explain(model, X).selected == [()] * 9


def test_classification_predict_returns_probabilities():
    model = init_model(gating_spec(3, [4]), NetworkSpec([4, 3]), GateConfig(), CLASSIFICATION, 0)
    out = predict(model, np.random.default_rng(11).normal(size=(5, 3)))
    np.testing.assert_allclose(out.probabilities.sum(axis=1), 1.0)
    np.testing.assert_array_equal(out.values, out.probabilities.argmax(axis=1))


def test_explain_threshold_rule():
    exp = explanation_from_gates(np.array([[0.0, 0.5, 1.0], [0.0, 0.0, 0.2], [0.3, 0.1, 0.0]]))
    assert exp.selected == [(2, 3), (3,), (1, 2)]
    assert exp.counts.tolist() == [2, 1, 2]
    assert exp.median_count == 2.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), shift=st.floats(-5, 5))
def test_closed_gate_irrelevance(seed, shift):
    rng = np.random.default_rng(seed)
    model = regression_model(d=4, s=0.5, seed=seed, hidden=(5, 3))
    X = rng.normal(size=(3, 4))
    gates = rng.uniform(size=(3, 4))
    gates[:, 1] = 0.0
    moved = X.copy()
    moved[:, 1] += shift
    np.testing.assert_array_equal(predict(model, X, gates).values, predict(model, moved, gates).values)


def test_closed_gate_irrelevance_through_gating_network():
    model = regression_model(d=4, s=0.5, seed=2)
    model.gating.biases[-1].data[2] = -50.0
    model.gating.weights[0].data[2, :] = 0.0  # the gating net cannot see x3
    X = np.random.default_rng(12).normal(size=(5, 4))
    moved = X.copy()
    moved[:, 2] += 3.0
    assert np.all(predict(model, X).gates[:, 2] == 0.0)
    np.testing.assert_array_equal(predict(model, X).values, predict(model, moved).values)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), a=st.floats(-2, 2), b=st.floats(-2, 2))
def test_activation_free_network_superposition(seed, a, b):
    rng = np.random.default_rng(seed)
    model = regression_model(d=5, act="identity", hidden=(6, 4), s=0.4, seed=seed)
    u, v = rng.normal(size=(1, 5)), rng.normal(size=(1, 5))
    gates = rng.uniform(size=(1, 5))
    f = lambda x: predict(model, x, gates).values[0]  # noqa: E731
    zero = f(np.zeros((1, 5)))
    combined = f(a * u + b * v) - zero
    assert combined == pytest.approx(a * (f(u) - zero) + b * (f(v) - zero), rel=1e-9, abs=1e-12)


# checkpoints


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    data = gen_e4(10, seed=0)
    model = init_model(gating_spec(50, [6]), NetworkSpec([6, 2], use_batch_norm=True), GateConfig(lambda1=0.3), CLASSIFICATION, 1)
    train(model, data, TrainConfig(epochs=5, learning_rate=0.1))
    save_checkpoint(model, tmp_path / "m.json")
    loaded = load_checkpoint(tmp_path / "m.json")
    for p, q in zip(model.parameters(), loaded.parameters()):
        np.testing.assert_array_equal(p.data, q.data)
    for s, t in zip(model.prediction.norms, loaded.prediction.norms):
        np.testing.assert_array_equal(s.running_mean, t.running_mean)
        np.testing.assert_array_equal(s.running_var, t.running_var)
    assert loaded.gate_config == model.gate_config and loaded.task == model.task
    np.testing.assert_array_equal(predict(model, data.X).gates, predict(loaded, data.X).gates)


def test_checkpoint_version_is_checked(tmp_path):
    (tmp_path / "m.json").write_text('{"version": 99}')
    with pytest.raises(SpecError):
        load_checkpoint(tmp_path / "m.json")
