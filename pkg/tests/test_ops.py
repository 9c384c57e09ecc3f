"""Forward contracts of the neural-network primitives."""

import math

import numpy as np
import pytest

from budgetvit import ops
from budgetvit.errors import ArgumentError, ShapeError
from budgetvit.tensor import Tensor


# -- linear -------------------------------------------------------------------

def test_linear_identity_weights():
    out = ops.linear(np.array([1.0, 2.0]), np.eye(2), np.zeros(2))
    np.testing.assert_array_equal(out.data, [1.0, 2.0])


def test_linear_dot_product():
    # 1*2 + 1*3 + 1 = 6
    out = ops.linear(np.array([1.0, 1.0]), np.array([[2.0], [3.0]]), np.array([1.0]))
    np.testing.assert_array_equal(out.data, [6.0])


def test_linear_zero_input_passes_bias():
    out = ops.linear(np.zeros(2), np.array([[9.0, 9.0], [9.0, 9.0]]), np.array([5.0, 7.0]))
    np.testing.assert_array_equal(out.data, [5.0, 7.0])


def test_linear_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as ei:
        ops.linear(np.zeros((2, 3)), np.zeros((4, 5)), np.zeros(5))
    assert "(2, 3)" in str(ei.value) and "(4, 5)" in str(ei.value)


def test_linear_leading_axes():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 5, 3))
    w = rng.standard_normal((3, 4))
    b = rng.standard_normal(4)
    out = ops.linear(x, w, b)
    assert out.shape == (2, 5, 4)
    np.testing.assert_allclose(out.data, x @ w + b)


# -- layernorm ----------------------------------------------------------------

def test_layernorm_constant_slice_is_zero():
    out = ops.layernorm(np.array([3.7, 3.7, 3.7]), np.ones(3), np.zeros(3), eps=1e-6)
    np.testing.assert_allclose(out.data, np.zeros(3), atol=1e-12)


def test_layernorm_against_direct_computation():
    # mean 2, biased var 2/3
    x = np.array([1.0, 2.0, 3.0])
    out = ops.layernorm(x, np.ones(3), np.zeros(3), eps=1e-12)
    expected = (x - 2.0) / np.sqrt(2.0 / 3.0 + 1e-12)
    np.testing.assert_allclose(out.data, expected, rtol=1e-12)
    np.testing.assert_allclose(out.data, [-1.224744871, 0.0, 1.224744871], atol=1e-8)


def test_layernorm_zero_gain_passes_shift():
    out = ops.layernorm(np.array([1.0, 2.0, 3.0]), np.zeros(3), np.array([4.0, 5.0, 6.0]))
    np.testing.assert_array_equal(out.data, [4.0, 5.0, 6.0])


def test_layernorm_empty_axis_error():
    with pytest.raises(ShapeError):
        ops.layernorm(np.zeros((2, 0)), np.zeros(0), np.zeros(0))


def test_layernorm_eps_must_be_positive():
    with pytest.raises(ArgumentError):
        ops.layernorm(np.ones(3), np.ones(3), np.zeros(3), eps=0.0)


def test_layernorm_normalizes_every_slice():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((4, 6, 8))
    out = ops.layernorm(x, np.ones(8), np.zeros(8), eps=1e-12).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-9)


# -- softmax ------------------------------------------------------------------

def test_softmax_symmetry():
    np.testing.assert_allclose(ops.softmax(np.array([0.0, 0.0])).data, [0.5, 0.5])


def test_softmax_large_logits_no_overflow():
    out = ops.softmax(np.array([1000.0, 1000.0])).data
    assert np.isfinite(out).all()
    np.testing.assert_allclose(out, [0.5, 0.5])


def test_softmax_exp_ratio():
    out = ops.softmax(np.array([0.0, math.log(3.0)])).data
    np.testing.assert_allclose(out, [0.25, 0.75], rtol=1e-12)


def test_softmax_slices_sum_to_one():
    rng = np.random.default_rng(11)
    x64 = rng.standard_normal((5, 4, 9)) * 50
    np.testing.assert_allclose(ops.softmax(x64).data.sum(axis=-1), 1.0, atol=1e-12)
    x32 = x64.astype(np.float32)
    np.testing.assert_allclose(ops.softmax(x32).data.sum(axis=-1), 1.0, atol=1e-6)


# -- activations --------------------------------------------------------------

def test_h_swish_table():
    x = np.array([0.0, -3.0, 3.0, 6.0, -10.0])
    np.testing.assert_array_equal(ops.h_swish(x).data, [0.0, 0.0, 3.0, 6.0, 0.0])


def test_h_swish_formula_elementwise():
    rng = np.random.default_rng(13)
    x = rng.uniform(-8, 8, size=100)
    np.testing.assert_allclose(ops.h_swish(x).data, x * np.clip(x + 3, 0, 6) / 6, rtol=1e-12)


def test_gelu_limits():
    assert ops.gelu(np.array([0.0])).data[0] == 0.0
    np.testing.assert_allclose(ops.gelu(np.array([10.0])).data, [10.0], rtol=1e-8)
    np.testing.assert_allclose(ops.gelu(np.array([-10.0])).data, [0.0], atol=1e-8)


def test_gelu_tanh_close_to_exact():
    rng = np.random.default_rng(17)
    x = rng.uniform(-4, 4, size=200)
    exact = ops.gelu(x).data
    approx = ops.gelu(x, approximate=True).data
    np.testing.assert_allclose(approx, exact, atol=5e-3)


# -- depthwise conv -----------------------------------------------------------

def _identity_kernel(c):
    k = np.zeros((c, 3, 3))
    k[:, 1, 1] = 1.0
    return k


def test_dwconv_identity_kernel():
    rng = np.random.default_rng(19)
    x = rng.standard_normal((4, 5, 6))
    out = ops.depthwise_conv3x3(x, _identity_kernel(4), np.zeros(4))
    np.testing.assert_array_equal(out.data, x)


def test_dwconv_all_ones_interior_edges_corners():
    x = np.ones((2, 5, 5))
    out = ops.depthwise_conv3x3(x, np.ones((2, 3, 3)), np.zeros(2)).data
    assert (out[:, 1:-1, 1:-1] == 9.0).all()
    corners = out[:, [0, 0, -1, -1], [0, -1, 0, -1]]
    assert (corners == 4.0).all()
    assert (out[:, 0, 1:-1] == 6.0).all()  # zero padding leaves 6 taps on an edge


def test_dwconv_never_mixes_channels():
    rng = np.random.default_rng(23)
    x = rng.standard_normal((3, 6, 6))
    k = rng.standard_normal((3, 3, 3))
    b = rng.standard_normal(3)
    full = ops.depthwise_conv3x3(x, k, b).data
    x0 = x.copy()
    x0[1] = 0.0
    zeroed = ops.depthwise_conv3x3(x0, k, b).data
    np.testing.assert_array_equal(full[0], zeroed[0])
    np.testing.assert_array_equal(full[2], zeroed[2])
    np.testing.assert_array_equal(zeroed[1], np.full((6, 6), b[1]))


def test_dwconv_channel_mismatch_error():
    with pytest.raises(ShapeError):
        ops.depthwise_conv3x3(np.zeros((4, 5, 5)), np.zeros((3, 3, 3)), np.zeros(3))
    with pytest.raises(ShapeError):
        ops.depthwise_conv3x3(np.zeros((4, 5, 5)), np.zeros((4, 3, 3)), np.zeros(3))


def test_dwconv_channels_last_route_bit_identical():
    rng = np.random.default_rng(29)
    x = rng.standard_normal((5, 7, 7, 12))
    k = rng.standard_normal((12, 3, 3))
    b = rng.standard_normal(12)
    cl = ops.depthwise_conv3x3_tokens(x, k, b).data
    cf = ops.depthwise_conv3x3(x.transpose(0, 3, 1, 2), k, b).data.transpose(0, 2, 3, 1)
    np.testing.assert_array_equal(cl, cf)


# -- bilinear resize ----------------------------------------------------------

def test_resize_identity_bit_exact():
    rng = np.random.default_rng(31)
    x = rng.standard_normal((3, 7, 5))
    for ac in (True, False):
        np.testing.assert_array_equal(ops.bilinear_resize(x, 7, 5, align_corners=ac).data, x)


def test_resize_constant_image_stays_constant():
    x = np.full((2, 4, 4), 3.25)
    for ac in (True, False):
        out = ops.bilinear_resize(x, 9, 6, align_corners=ac).data
        np.testing.assert_allclose(out, 3.25, rtol=1e-12)


def test_resize_linear_ramp_midpoints():
    x = np.array([[[0.0, 1.0], [0.0, 1.0]]])
    out = ops.bilinear_resize(x, 3, 3, align_corners=True).data
    np.testing.assert_allclose(out[0], [[0.0, 0.5, 1.0]] * 3, atol=1e-15)


def test_resize_corners_preserved_align_corners():
    rng = np.random.default_rng(37)
    x = rng.standard_normal((1, 4, 4))
    out = ops.bilinear_resize(x, 9, 7, align_corners=True).data
    for (oi, oj), (ii, ij) in [((0, 0), (0, 0)), ((0, -1), (0, -1)), ((-1, 0), (-1, 0)), ((-1, -1), (-1, -1))]:
        assert out[0, oi, oj] == pytest.approx(x[0, ii, ij], abs=1e-15)


def test_resize_bad_target_error():
    with pytest.raises(ArgumentError):
        ops.bilinear_resize(np.zeros((1, 4, 4)), 0, 3)


# -- cross entropy with label smoothing ----------------------------------------

def test_ce_uniform_logits_gives_log_c():
    logits = np.zeros((3, 7))
    labels = np.array([0, 3, 6])
    for eps in (0.0, 0.1, 0.5):
        loss = ops.cross_entropy_ls(logits, labels, eps)
        assert float(loss.data) == pytest.approx(math.log(7.0), rel=1e-12)


def test_ce_confident_correct_prediction():
    loss = ops.cross_entropy_ls(np.array([[10.0, -10.0]]), np.array([0]), 0.0)
    # exact value: log(1 + e^-20)
    assert float(loss.data) == pytest.approx(math.log1p(math.exp(-20.0)), rel=1e-9)
    assert float(loss.data) == pytest.approx(2e-9, rel=0.05)


def test_ce_label_out_of_range():
    with pytest.raises(ArgumentError):
        ops.cross_entropy_ls(np.zeros((2, 3)), np.array([0, 3]), 0.0)
    with pytest.raises(ArgumentError):
        ops.cross_entropy_ls(np.zeros((2, 3)), np.array([-1, 0]), 0.0)


def test_ce_epsilon_range():
    with pytest.raises(ArgumentError):
        ops.cross_entropy_ls(np.zeros((1, 2)), np.array([0]), 1.0)


def test_ce_gradient_is_softmax_minus_onehot():
    rng = np.random.default_rng(41)
    logits_np = rng.standard_normal((4, 6))
    labels = rng.integers(0, 6, size=4)
    logits = Tensor(logits_np.copy(), requires_grad=True)
    ops.cross_entropy_ls(logits, labels, 0.0).backward()

    e = np.exp(logits_np - logits_np.max(axis=1, keepdims=True))
    sm = e / e.sum(axis=1, keepdims=True)
    onehot = np.zeros((4, 6))
    onehot[np.arange(4), labels] = 1.0
    np.testing.assert_allclose(logits.grad, (sm - onehot) / 4, rtol=1e-10)

    # and against central finite differences
    eps = 1e-6
    num = np.zeros_like(logits_np)
    for i in range(logits_np.size):
        pert = logits_np.copy().reshape(-1)
        pert[i] += eps
        fp = float(ops.cross_entropy_ls(pert.reshape(4, 6), labels, 0.0).data)
        pert[i] -= 2 * eps
        fm = float(ops.cross_entropy_ls(pert.reshape(4, 6), labels, 0.0).data)
        num.reshape(-1)[i] = (fp - fm) / (2 * eps)
    np.testing.assert_allclose(logits.grad, num, atol=1e-8)


def test_ce_minimized_at_finite_point_with_smoothing():
    # with epsilon > 0 the optimum is finite: gradient vanishes where
    # softmax equals the smoothed target
    labels = np.array([1])
    eps = 0.2
    q = np.full(4, eps / 4)
    q[1] += 1 - eps
    logits_star = np.log(q).reshape(1, 4)
    t = Tensor(logits_star, requires_grad=True)
    ops.cross_entropy_ls(t, labels, eps).backward()
    np.testing.assert_allclose(t.grad, 0.0, atol=1e-12)
