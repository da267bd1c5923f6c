import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csformer.data import make_windows
from csformer.errors import ConfigError, ContractError, DimensionError, NumericsError
from csformer.model import CSformer, ModelConfig
from csformer.tensor import GradTape, Tensor
from csformer.training import (
    Adam,
    TrainConfig,
    adam_step,
    evaluate,
    fit,
    mse_loss,
    predict,
    restore,
    snapshot,
    write_history,
)
from fixtures import convergence_run


# loss ---------------------------------------------------------------------------------

def test_mse_zero_when_equal():
    y = np.random.default_rng(0).normal(size=(2, 3))
    assert mse_loss(y, y).item() == 0.0


def test_mse_hand_value():
    assert mse_loss([0.0, 0.0], [3.0, 4.0]).item() == 12.5


def test_mse_translation_invariant():
    rng = np.random.default_rng(1)
    p, t = rng.normal(size=5), rng.normal(size=5)
    assert math.isclose(mse_loss(p + 3.7, t + 3.7).item(), mse_loss(p, t).item(), rel_tol=1e-12)


def test_mse_shape_mismatch():
    with pytest.raises(DimensionError):
        mse_loss(np.zeros(3), np.zeros(4))


def test_mse_gradient():
    p = Tensor([1.0, -2.0], requires_grad=True)
    with GradTape() as tape:
        loss = mse_loss(p, [0.0, 0.0])
    tape.backward(loss)
    assert np.allclose(p.grad, [1.0, -2.0])


# adam -----------------------------------------------------------------------------------

def test_adam_zero_grad_no_move():
    p = Tensor([1.0, 2.0], requires_grad=True)
    p.grad = np.zeros(2)
    adam_step(Adam(), {"p": p}, 1e-3)
    assert p.data.tolist() == [1.0, 2.0]


def test_adam_first_step_hand_value():
    p = Tensor([1.0], requires_grad=True)
    p.grad = np.array([1.0])
    opt = Adam()
    opt.step({"p": p}, 1e-4)
    # m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
    assert p.data[0] == 1.0 - 1e-4 * 1.0 / (1.0 + 1e-8)
    assert abs(p.data[0] - (1.0 - 1e-4)) < 1e-11
    assert opt.t == 1


def test_adam_symmetry():
    a = Tensor([0.3], requires_grad=True)
    b = Tensor([0.3], requires_grad=True)
    opt = Adam()
    rng = np.random.default_rng(2)
    for _ in range(20):
        g = rng.normal(size=1)
        a.grad, b.grad = g.copy(), g.copy()
        opt.step({"a": a, "b": b}, 1e-2)
        assert a.data[0] == b.data[0]
    assert opt.t == 20
    assert np.all(opt.v["a"] >= 0)


def test_adam_missing_grad():
    with pytest.raises(ContractError, match="p"):
        Adam().step({"p": Tensor([1.0], requires_grad=True)}, 1e-3)


# config -----------------------------------------------------------------------------------

@pytest.mark.parametrize("kw", [{"learning_rate": 0}, {"batch_size": 0}, {"patience": 0}, {"max_epochs": 2, "patience": 3}])
def test_train_config_validation(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


# fit / evaluate -----------------------------------------------------------------------------

def small_setup(seed=0):
    rng = np.random.default_rng(seed)
    values = np.cumsum(rng.normal(size=(120, 2)), axis=0) * 0.1
    windows = make_windows(values, 8, 4)
    model = CSformer(ModelConfig(n_channels=2, lookback=8, horizon=4, d_model=4), seed=seed)
    return model, windows[:80], windows[80:]


def test_zero_epochs_returns_initial_model():
    model, train, val = small_setup()
    before = snapshot(model)
    result = fit(model, train, val, TrainConfig(max_epochs=0))
    assert result.history == [] and result.steps == 0
    after = snapshot(model)
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_fit_is_deterministic():
    runs = []
    for _ in range(2):
        model, train, val = small_setup()
        result = fit(model, train, val, TrainConfig(learning_rate=1e-3, batch_size=16, max_epochs=3, patience=3, seed=5))
        runs.append((result.history, snapshot(model)))
    assert runs[0][0] == runs[1][0]
    assert all(np.array_equal(runs[0][1][k], runs[1][1][k]) for k in runs[0][1])


def test_fit_keeps_partial_batch_and_counts_steps():
    model, train, val = small_setup()
    result = fit(model, train, val, TrainConfig(learning_rate=1e-3, batch_size=32, max_epochs=1, patience=1))
    assert result.steps == math.ceil(len(train) / 32)
    assert not model.training


def test_fit_max_steps():
    model, train, val = small_setup()
    result = fit(model, train, val, TrainConfig(learning_rate=1e-3, batch_size=16, max_epochs=5, patience=5, max_steps=7))
    assert result.steps == 7


def test_fit_restores_best_state():
    model, train, val = small_setup(1)
    result = fit(model, train, val, TrainConfig(learning_rate=1e-2, batch_size=16, max_epochs=6, patience=6))
    assert math.isclose(evaluate(model, val)[0], result.best_val_mse, rel_tol=1e-12)
    assert result.best_val_mse == min(r.val_mse for r in result.history)


def test_fit_nan_loss_aborts_with_last_good_state():
    model, train, val = small_setup()
    before = snapshot(model)
    model.head.bias.data[0] = np.inf
    poisoned = snapshot(model)
    with pytest.raises(NumericsError):
        fit(model, train, val, TrainConfig(max_epochs=1, patience=1))
    after = snapshot(model)
    assert all(np.array_equal(poisoned[k], after[k]) for k in before)


def test_fit_rejects_mismatched_windows():
    model, train, val = small_setup()
    other = make_windows(np.zeros((40, 3)), 8, 4)
    with pytest.raises(ConfigError):
        fit(model, other, other, TrainConfig(max_epochs=1, patience=1))


def _zero_model():
    m = CSformer(ModelConfig(n_channels=2, lookback=8, horizon=4, d_model=4, revin=False))
    m.head.weight.data[...] = 0.0
    m.head.bias.data[...] = 0.0
    return m


def test_evaluate_exact_predictions():
    assert evaluate(_zero_model(), make_windows(np.zeros((30, 2)), 8, 4)) == (0.0, 0.0)


def test_evaluate_zero_model_constant_targets():
    assert evaluate(_zero_model(), make_windows(np.full((30, 2), 2.0), 8, 4)) == (4.0, 2.0)


def test_evaluate_empty_rejected():
    model, train, _ = small_setup()
    with pytest.raises(ContractError):
        evaluate(model, train[:0])


@given(st.integers(0, 1000))
@settings(max_examples=10, deadline=None)
def test_jensen_mae_below_root_mse(seed):
    model, _, val = small_setup(seed % 7)
    model.nu.data[...] = np.random.default_rng(seed).uniform(-1, 1, size=model.nu.shape)
    mse, mae = evaluate(model, val)
    assert mse >= 0 and mae >= 0
    assert mae <= math.sqrt(mse) + 1e-12


def test_predict_restores_mode():
    model, _, val = small_setup()
    model.train()
    x, _ = val.batch([0, 1])
    predict(model, x)
    assert model.training


def test_snapshot_restore_round_trip():
    model, train, val = small_setup()
    state = snapshot(model)
    fit(model, train, val, TrainConfig(learning_rate=1e-2, batch_size=16, max_epochs=1, patience=1))
    restore(model, state)
    again = snapshot(model)
    assert all(np.array_equal(state[k], again[k]) for k in state)


def test_write_history(tmp_path):
    model, train, val = small_setup()
    result = fit(model, train, val, TrainConfig(learning_rate=1e-3, batch_size=32, max_epochs=2, patience=2))
    path = tmp_path / "history.csv"
    write_history(result.history, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,train_mse,val_mse,steps"
    assert len(lines) == 1 + len(result.history)


def test_short_convergence_run_improves_validation():
    result, train_mse = convergence_run(max_steps=300)
    assert result.steps == 300
    assert result.best_val_mse <= result.history[0].val_mse
    assert train_mse < result.history[0].train_mse
