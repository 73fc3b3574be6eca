from __future__ import annotations

import math

import numpy as np
import pytest

from tass import numcore as nc
from tass.errors import DimensionError, NonFiniteGradientError
from tass.numcore import Tape, Tensor, backward
from tass.optim import Adam, AdamState, adam_step


def test_zero_gradients_leave_parameters_unchanged(rng):
    params = {"w": Tensor(rng.standard_normal((3, 2))), "b": Tensor(rng.standard_normal(2))}
    before = {k: p.data.copy() for k, p in params.items()}
    state = AdamState()
    for _ in range(3):
        adam_step(params, {"w": np.zeros((3, 2)), "b": None}, state, lr=0.1)
    for k, p in params.items():
        np.testing.assert_array_equal(p.data, before[k])
    assert state.step == 3


def test_first_step_moves_by_learning_rate():
    x = Tensor([1.0], requires_grad=True)
    opt = Adam({"x": x})
    with Tape() as tape:
        loss = nc.sum_all(nc.mul(x, x))
    backward(loss, tape)
    opt.step(0.1)
    assert x.data[0] == pytest.approx(0.9, abs=1e-6)


def test_matches_scalar_reference(rng):
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    p = Tensor(rng.standard_normal(4))
    grads = [rng.standard_normal(4) for _ in range(5)]
    reference = p.data.copy()
    m = [0.0] * 4
    v = [0.0] * 4
    state = AdamState()
    for step, g in enumerate(grads, start=1):
        adam_step({"p": p}, {"p": g}, state, lr, b1, b2, eps)
        for i in range(4):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i]
            m_hat = m[i] / (1 - b1**step)
            v_hat = v[i] / (1 - b2**step)
            reference[i] -= lr * m_hat / (math.sqrt(v_hat) + eps)
    np.testing.assert_allclose(p.data, reference, rtol=0, atol=1e-12)


def test_non_finite_gradient_aborts_the_whole_step():
    a, b = Tensor([1.0, 2.0]), Tensor([3.0])
    state = AdamState()
    with pytest.raises(NonFiniteGradientError) as excinfo:
        adam_step({"a": a, "b": b}, {"a": np.array([0.5, 0.5]), "b": np.array([np.nan])}, state, lr=0.1)
    assert excinfo.value.path == "b"
    assert a.data.tolist() == [1.0, 2.0]
    assert state.step == 0
    assert state.m == {}


def test_gradient_shape_must_match():
    with pytest.raises(DimensionError, match="w"):
        adam_step({"w": Tensor(np.ones((2, 2)))}, {"w": np.ones(4)}, AdamState(), lr=0.1)


def test_zero_grad_clears_gradients():
    x = Tensor([1.0], requires_grad=True)
    x.grad = np.array([3.0])
    opt = Adam({"x": x})
    opt.zero_grad()
    assert x.grad is None
