"""Adam behavior: trivial invariants, the hand-derived first step, and a
scalar convergence run."""

import numpy as np
import pytest

from stimseq.errors import TrainingError
from stimseq.optim import adam_init, adam_step
from stimseq.tensor import Tensor


def make_param(value):
    return {"p": Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)}


def test_zero_gradient_leaves_params_and_decays_moments():
    # zero gradient from a fresh state: moments stay zero, update is exactly 0
    params = make_param([1.0, -2.0])
    state = adam_init(params, learning_rate=0.1)
    for _ in range(5):
        params["p"].grad = np.zeros(2)
        adam_step(params, state)
        np.testing.assert_array_equal(params["p"].data, [1.0, -2.0])

    # once moments exist, zero gradients decay them geometrically
    params["p"].grad = np.array([1.0, 1.0])
    adam_step(params, state)
    m_after = np.abs(state.m["p"].copy())
    params["p"].grad = np.zeros(2)
    adam_step(params, state)
    assert np.all(np.abs(state.m["p"]) < m_after)
    assert state.step == 7


def test_first_step_magnitude_is_learning_rate():
    for g in (0.5, -3.0, 1e-4):
        params = make_param(0.7)
        state = adam_init(params, learning_rate=1e-3)
        params["p"].grad = np.asarray(g)
        adam_step(params, state)
        delta = params["p"].data - 0.7
        assert np.sign(delta) == -np.sign(g)
        np.testing.assert_allclose(abs(delta), 1e-3, rtol=1e-3)


def test_scalar_quadratic_converges():
    # f(x) = x^2 from x=1 with lr 0.1: |x| < 0.05 after 100 steps
    params = make_param(1.0)
    state = adam_init(params, learning_rate=0.1)
    for _ in range(100):
        params["p"].grad = 2 * params["p"].data
        adam_step(params, state)
    assert abs(params["p"].data.item()) < 0.05


def test_step_counter_strictly_increases():
    params = make_param(0.0)
    state = adam_init(params)
    for expected in (1, 2, 3):
        params["p"].grad = np.asarray(1.0)
        adam_step(params, state)
        assert state.step == expected


def test_nonfinite_gradient_names_parameter():
    params = {"stage0/conv/weight": Tensor(np.zeros(2), requires_grad=True, dtype=np.float64)}
    state = adam_init(params)
    params["stage0/conv/weight"].grad = np.array([1.0, np.nan])
    with pytest.raises(TrainingError, match="stage0/conv/weight"):
        adam_step(params, state)


def test_moment_shapes_match_params():
    params = {
        "a": Tensor(np.zeros((2, 3)), requires_grad=True, dtype=np.float64),
        "b": Tensor(np.zeros(5), requires_grad=True, dtype=np.float64),
    }
    state = adam_init(params)
    for name, p in params.items():
        assert state.m[name].shape == p.data.shape
        assert state.v[name].shape == p.data.shape
