import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from caaf.datamodel import SensorDataset
from caaf.errors import ConfigError, ShapeError, TrainingError
from caaf.surrogate import (
    MLPConfig,
    SurrogateModel,
    TrainConfig,
    _train_step_grads,
    fit,
    init_model,
    split_indices,
    training_loss,
)
from oracles import central_jacobian, random_model


@pytest.mark.parametrize("activation", ["leaky_relu", "relu"])
@pytest.mark.parametrize("bn", [True, False])
def test_jacobian_matches_finite_differences(activation, bn):
    m = random_model(3, activation=activation, batch_norm=bn)
    rng = np.random.default_rng(0)
    for x in rng.normal(size=(20, 4)):
        jac = m.jacobian(x)
        fd = central_jacobian(m.forward, x)
        assert np.all(np.abs(jac - fd) <= 1e-4 * np.maximum(np.abs(fd), 1e-3))


def test_batch_jacobian_matches_single():
    m = random_model(1)
    x = np.random.default_rng(2).normal(size=(6, 4))
    jb = m.jacobian(x)
    assert jb.shape == (6, 2, 4)
    for i in range(6):
        np.testing.assert_allclose(jb[i], m.jacobian(x[i]), rtol=0, atol=1e-14)
    np.testing.assert_allclose(m.input_gradient(x[0], 1), jb[0, 1])


@pytest.mark.parametrize("bn", [True, False])
def test_parameter_gradients_match_finite_differences(bn):
    m = random_model(5, n_in=3, n_out=2, hidden=(4, 3), batch_norm=bn)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(9, 3))
    y = rng.normal(size=(9, 2))
    _, grads, _ = _train_step_grads(m, x, y)
    for p, g in zip(m.parameters(), grads):
        flat = p.reshape(-1)
        num = np.empty_like(flat)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + 1e-6
            up = training_loss(m, x, y)
            flat[i] = old - 1e-6
            down = training_loss(m, x, y)
            flat[i] = old
            num[i] = (up - down) / 2e-6
        np.testing.assert_allclose(g.reshape(-1), num, rtol=1e-4, atol=1e-7)


def test_glorot_bounds():
    m = init_model(MLPConfig(5, 2, (8, 8), seed=4))
    for w in m.weights:
        fan_in, fan_out = w.shape
        assert np.abs(w).max() <= np.sqrt(6 / (fan_in + fan_out))
    for b in m.biases:
        assert not b.any()


def _linear_task(n=2000, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=(n, 3))
    y = x @ np.array([[0.5], [-1.0], [0.25]]) + 0.1
    return SensorDataset(x, y, ["a", "b", "c"], ["y"])


def test_fits_linear_target():
    ds = _linear_task()
    model, hist = fit(ds, MLPConfig(hidden_layers=(16, 16), l2_reg=0.0, batch_norm=False),
                      TrainConfig(epochs=200, learning_rate=3e-3, batch_size=64))
    assert hist.validation[-1] < 1e-3
    assert hist.train[-1] < hist.train[0]


def test_training_is_deterministic():
    ds = _linear_task(300)
    a, ha = fit(ds, MLPConfig(seed=2), TrainConfig(epochs=5, shuffle_seed=3))
    b, hb = fit(ds, MLPConfig(seed=2), TrainConfig(epochs=5, shuffle_seed=3))
    assert a.to_json() == b.to_json()
    assert ha.train == hb.train
    c, _ = fit(ds, MLPConfig(seed=2), TrainConfig(epochs=5, shuffle_seed=4))
    assert c.to_json() != a.to_json()


def test_json_round_trip_preserves_outputs():
    ds = _linear_task(200)
    m, _ = fit(ds, MLPConfig(hidden_layers=(6, 5)), TrainConfig(epochs=3))
    back = SurrogateModel.from_json(m.to_json())
    x = ds.values[:17]
    np.testing.assert_array_equal(back.forward(x), m.forward(x))
    assert back.to_json() == m.to_json()
    json.loads(m.to_json())


def test_nan_loss_raises_with_location():
    ds = _linear_task(200)
    with pytest.raises(TrainingError) as err:
        fit(ds, MLPConfig(batch_norm=False), TrainConfig(epochs=3, learning_rate=1e300))
    assert err.value.epoch is not None


def test_shape_checks():
    m = init_model(MLPConfig(3, 1))
    with pytest.raises(ShapeError):
        m.forward(np.zeros(4))
    with pytest.raises(ConfigError):
        MLPConfig(activation="tanh")
    with pytest.raises(ConfigError):
        TrainConfig(validation_fraction=1.0)


@given(st.integers(1, 500), st.floats(0.0, 0.9), st.integers(0, 99))
def test_split_is_a_partition(n, frac, seed):
    tc = TrainConfig(validation_fraction=frac, shuffle_seed=seed)
    try:
        tr, va = split_indices(n, tc)
    except ConfigError:
        assert n - round(n * frac) < 1
        return
    assert sorted(np.concatenate([tr, va]).tolist()) == list(range(n))
