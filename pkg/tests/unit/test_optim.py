"""
Adam updates: first-step shape, moments, gradient rejection.
"""

import numpy as np
import pytest

from conftest import tiny_model_config
from segcrowd.config import TrainConfig
from segcrowd.errors import NonFiniteError, ShapeError
from segcrowd.model import build, param_dims
from segcrowd.optim import OptimizerState, adam_step
from segcrowd.tensor import Tensor


@pytest.fixture
def params(rng):
    return {
        "w": Tensor(rng.normal(size=(3, 4)), requires_grad=True),
        "b": Tensor(np.zeros(3), requires_grad=True),
    }


def test_zero_gradients_leave_parameters(params):
    before = {n: t.values.copy() for n, t in params.items()}
    state = adam_step(params, {n: np.zeros(t.dims) for n, t in params.items()}, OptimizerState(lr=0.1))
    for name in params:
        np.testing.assert_array_equal(params[name].values, before[name])
    assert state.step == 1


def test_first_step_moves_by_learning_rate(params, rng):
    grads = {"w": rng.normal(size=(3, 4)), "b": np.array([2.0, -0.5, 1e-3])}
    before = params["w"].values.copy()
    adam_step(params, grads, OptimizerState(lr=1e-3))
    np.testing.assert_allclose(params["w"].values - before, -1e-3 * np.sign(grads["w"]), rtol=1e-3)
    np.testing.assert_allclose(params["b"].values, [-1e-3, 1e-3, -1e-3], rtol=1e-4)


def test_matches_reference_recurrence(rng):
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    state = OptimizerState(lr=0.01)
    m = v = np.zeros(2)
    expected = p.values.copy()
    for t in range(1, 6):
        g = rng.normal(size=2)
        adam_step({"p": p}, {"p": g}, state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        expected -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p.values, expected, rtol=1e-12)
    assert state.step == 5


def test_missing_gradient_counts_as_zero(params):
    before = params["b"].values.copy()
    adam_step(params, {"w": np.ones((3, 4))}, OptimizerState())
    np.testing.assert_array_equal(params["b"].values, before)


def test_nan_gradient_rejected_without_update(params):
    before = {n: t.values.copy() for n, t in params.items()}
    state = OptimizerState()
    grads = {"w": np.ones((3, 4)), "b": np.array([0.0, np.nan, 0.0])}
    with pytest.raises(NonFiniteError, match="parameter b"):
        adam_step(params, grads, state)
    for name in params:
        np.testing.assert_array_equal(params[name].values, before[name])
    assert state.step == 0 and not state.m


def test_gradient_dims_mismatch(params):
    with pytest.raises(ShapeError, match="w"):
        adam_step(params, {"w": np.zeros((4, 3))}, OptimizerState())


def test_unknown_gradient_name(params):
    with pytest.raises(ShapeError, match="unknown"):
        adam_step(params, {"gamma": np.zeros(1)}, OptimizerState())


def test_deterministic_on_model_params(rng):
    grads = {n: rng.normal(size=d) for n, d in param_dims(tiny_model_config()).items()}
    a, b = build(tiny_model_config()), build(tiny_model_config())
    adam_step(a, grads, OptimizerState(lr=1e-3))
    adam_step(b, grads, OptimizerState(lr=1e-3))
    for name, t in a.items():
        np.testing.assert_array_equal(t.values, b[name].values)


def test_state_from_config():
    state = OptimizerState.from_config(TrainConfig(learning_rate=3e-4, beta2=0.99))
    assert (state.lr, state.beta1, state.beta2) == (3e-4, 0.9, 0.99)
    assert state.to_dict()["step"] == 0
