import sys

import numpy as np
import pytest

from derain.errors import InvalidArgumentError, ShapeMismatchError
from derain.optim import Adam, AdamState, adam_step


def test_first_step_moves_by_learning_rate():
    params = {"p": np.full(4, 0.5)}
    state = AdamState(lr=1e-3, eps=1e-8)
    adam_step(state, params, {"p": np.ones(4)})
    # m_hat / sqrt(v_hat) == 1 on the first bias-corrected step
    assert np.allclose(0.5 - params["p"], 1e-3, rtol=1e-6)
    assert state.t == 1


def test_zero_gradient_leaves_params_unchanged():
    start = np.random.default_rng(0).random((2, 3))
    params = {"p": start.copy()}
    state = AdamState(lr=1e-3)
    for _ in range(3):
        adam_step(state, params, {"p": np.zeros((2, 3))})
    assert np.array_equal(params["p"], start)
    assert state.t == 3


def test_decay_only_step_scales_params():
    start = np.random.default_rng(1).random(5)
    params = {"p": start.copy()}
    state = AdamState(lr=1e-3, weight_decay=0.1)
    adam_step(state, params, {"p": np.zeros(5)})
    assert np.allclose(params["p"], start * (1 - 1e-4), rtol=0, atol=1e-15)


def test_step_counter_and_moment_shapes():
    params = {"a": np.zeros((2, 2), dtype=np.float32), "b": np.zeros(3, dtype=np.float32)}
    optimizer = Adam(params, lr=1e-2)
    for step in range(1, 4):
        optimizer.step({"a": np.ones((2, 2), dtype=np.float32), "b": -np.ones(3, dtype=np.float32)})
        assert optimizer.state.t == step
    for name, value in params.items():
        assert optimizer.state.m[name].shape == value.shape
        assert optimizer.state.v[name].shape == value.shape
    assert (params["a"] < 0).all() and (params["b"] > 0).all()


def test_lr_decay_multiplies_per_call():
    optimizer = Adam({"p": np.zeros(1)}, lr=1e-3, lr_decay=0.95)
    optimizer.decay_lr()
    optimizer.decay_lr()
    assert optimizer.state.lr == pytest.approx(1e-3 * 0.95 ** 2)


def test_mismatched_gradients_raise():
    state = AdamState()
    with pytest.raises(ShapeMismatchError):
        adam_step(state, {"p": np.zeros(3)}, {"p": np.zeros(4)})
    with pytest.raises(InvalidArgumentError):
        adam_step(state, {"p": np.zeros(3)}, {"q": np.zeros(3)})


def test_invalid_hyperparameters_raise():
    with pytest.raises(InvalidArgumentError):
        Adam({"p": np.zeros(1)}, lr=0.0)
    with pytest.raises(InvalidArgumentError):
        Adam({"p": np.zeros(1)}, weight_decay=-1.0)


def test_identical_runs_are_bitwise_identical():
    def run():
        rng = np.random.default_rng(7)
        params = {"w": rng.standard_normal((4, 4)).astype(np.float32)}
        optimizer = Adam(params, lr=1e-3, weight_decay=1e-4)
        for _ in range(5):
            optimizer.step({"w": rng.standard_normal((4, 4)).astype(np.float32)})
        return params["w"]

    assert np.array_equal(run(), run())


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
