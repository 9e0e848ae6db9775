"""
optim.py のテスト
"""

import numpy as np
import pytest

from missformer.errors import NumericError, ShapeError
from missformer.optim import AdamState, AdamW, adamw_step
from missformer.tensor import Tensor


def test_zero_gradient_leaves_parameters_unchanged(rng):
    p = rng.normal(size=(3, 2))
    new, state = adamw_step({"w": p}, {"w": np.zeros_like(p)}, AdamState(), lr=0.1, weight_decay=0.0)
    np.testing.assert_array_equal(new["w"], p)
    assert state.step == 1


def test_first_step_moves_by_lr_times_sign(rng):
    p = rng.normal(size=6)
    g = rng.normal(size=6)
    lr = 1e-3
    new, _ = adamw_step({"w": p}, {"w": g}, AdamState(), lr=lr)
    np.testing.assert_allclose(new["w"] - p, -lr * np.sign(g), rtol=1e-4)


def test_weight_decay_is_decoupled():
    p = np.array([2.0, -4.0])
    new, _ = adamw_step({"w": p}, {"w": np.zeros(2)}, AdamState(), lr=0.1, weight_decay=0.5)
    np.testing.assert_allclose(new["w"], p * (1 - 0.05))


def test_parameters_without_gradient_are_skipped():
    new, state = adamw_step({"a": np.ones(2), "b": np.ones(2)}, {"a": np.ones(2)}, AdamState())
    np.testing.assert_array_equal(new["b"], np.ones(2))
    assert "b" not in state.m


def test_non_finite_gradient_aborts():
    with pytest.raises(NumericError):
        adamw_step({"w": np.ones(2)}, {"w": np.array([1.0, np.inf])}, AdamState())


def test_gradient_shape_mismatch():
    with pytest.raises(ShapeError):
        adamw_step({"w": np.ones(2)}, {"w": np.ones(3)}, AdamState())


def test_adamw_minimizes_quadratic():
    target = np.array([1.5, -0.5, 3.0])
    w = Tensor(np.zeros(3), requires_grad=True)
    opt = AdamW([("w", w)], lr=0.01, weight_decay=0.0)
    for _ in range(2000):
        opt.zero_grad()
        d = w - target
        (d * d).sum().backward()
        opt.step()
    np.testing.assert_allclose(w.data, target, atol=1e-2)


def test_adamw_keeps_tensor_identity():
    w = Tensor(np.ones(2), requires_grad=True)
    data = w.data
    opt = AdamW([("w", w)], lr=0.1)
    (w * w).sum().backward()
    opt.step()
    assert w.data is data
    assert opt.state.step == 1
