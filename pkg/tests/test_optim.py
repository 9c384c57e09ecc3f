"""AdamW update contracts."""

import numpy as np
import pytest

from budgetvit.errors import ArgumentError, ShapeError
from budgetvit.optim import AdamW, adamw_step
from budgetvit.tensor import Tensor


def fresh_state(*params):
    return [{"m": np.zeros_like(p), "v": np.zeros_like(p)} for p in params]


def test_zero_grad_zero_decay_leaves_params():
    p = np.array([1.0, -2.0, 3.0])
    orig = p.copy()
    adamw_step([p], [np.zeros(3)], fresh_state(p), lr=1e-3, weight_decay=0.0, t=1)
    np.testing.assert_array_equal(p, orig)


def test_decoupled_decay_acts_alone():
    p = np.array([2.0, -4.0])
    lr, wd = 0.1, 0.5
    expected = p * (1 - lr * wd)
    adamw_step([p], [np.zeros(2)], fresh_state(p), lr=lr, weight_decay=wd, t=1)
    np.testing.assert_allclose(p, expected, rtol=1e-15)


def test_constant_gradient_step_magnitude_approaches_lr():
    # bias-corrected moments converge to g and g^2, so the update tends to lr
    p = np.array([0.0])
    g = np.array([2.5])
    st = fresh_state(p)
    lr = 1e-3
    prev = p.copy()
    for t in range(1, 400):
        adamw_step([p], [g], st, lr=lr, weight_decay=0.0, t=t)
        step = prev[0] - p[0]
        prev = p.copy()
    assert step == pytest.approx(lr, rel=1e-4)


def test_first_step_is_bias_corrected():
    # at t=1, m-hat = g and v-hat = g^2: the step is lr * g / (|g| + eps)
    p = np.array([1.0])
    g = np.array([0.3])
    lr, eps = 0.01, 1e-8
    adamw_step([p], [g], fresh_state(p), lr=lr, eps=eps, weight_decay=0.0, t=1)
    assert p[0] == pytest.approx(1.0 - lr * 0.3 / (0.3 + eps), rel=1e-12)


def test_lr_zero_bit_identical():
    rng = np.random.default_rng(5)
    p = rng.standard_normal(10)
    orig = p.copy()
    adamw_step([p], [rng.standard_normal(10)], fresh_state(p), lr=0.0, weight_decay=0.3, t=1)
    np.testing.assert_array_equal(p, orig)


def test_shape_mismatch_raises():
    p = np.zeros(3)
    with pytest.raises(ShapeError):
        adamw_step([p], [np.zeros(4)], fresh_state(p), lr=1e-3, t=1)


def test_t_must_be_positive():
    p = np.zeros(3)
    with pytest.raises(ArgumentError):
        adamw_step([p], [np.zeros(3)], fresh_state(p), lr=1e-3, t=0)


def test_moments_updated_in_place():
    p = np.array([1.0])
    g = np.array([0.5])
    st = fresh_state(p)
    adamw_step([p], [g], st, lr=1e-3, beta1=0.9, beta2=0.999, t=1)
    np.testing.assert_allclose(st[0]["m"], [0.05])
    np.testing.assert_allclose(st[0]["v"], [0.00025])


def test_wrapper_skips_params_without_grads():
    opt = AdamW(lr=0.1, weight_decay=0.0)
    a = Tensor(np.ones(2), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    a.grad = np.full(2, 0.1)
    opt.step({"a": a, "b": b})
    assert not np.array_equal(a.data, np.ones(2))
    np.testing.assert_array_equal(b.data, np.ones(2))
    assert "b" not in opt.moments


def test_wrapper_reset_drops_state():
    opt = AdamW(lr=0.1)
    a = Tensor(np.ones(3), requires_grad=True)
    a.grad = np.ones(3)
    opt.step({"a": a})
    assert "a" in opt.moments
    opt.reset("a")
    assert "a" not in opt.moments
    # next step works with a different shape
    a2 = Tensor(np.ones(5), requires_grad=True)
    a2.grad = np.ones(5)
    opt.step({"a": a2})
    assert opt.moments["a"]["m"].shape == (5,)


def test_wrapper_state_roundtrip():
    opt = AdamW(lr=0.1)
    a = Tensor(np.ones(3), requires_grad=True)
    a.grad = np.ones(3)
    opt.step({"a": a})
    st = opt.state_dict()
    opt2 = AdamW(lr=0.1)
    opt2.load_state_dict(st)
    assert opt2.t == 1
    np.testing.assert_array_equal(opt2.moments["a"]["m"], opt.moments["a"]["m"])
