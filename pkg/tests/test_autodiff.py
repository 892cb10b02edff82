"""Reverse-mode engine: every primitive against central finite differences.

Each check builds a scalar function of one leaf tensor, asks the engine for
the gradient, and compares it to the symmetric difference quotient computed
by re-running the forward pass -- an oracle that shares no code with the
vjp closures.  Structural op pairs are additionally checked for exact
adjointness, and a few second-derivative cases confirm that gradient
tensors can themselves be differentiated.
"""

import numpy as np
import pytest
from scipy.special import i0 as scipy_i0, iv as scipy_iv

from demotion.autodiff import (
    Tensor,
    absval,
    besseli_entire,
    broadcast_to,
    clip,
    concat,
    conv2d,
    cos,
    crop_nd,
    div,
    exp,
    grad_of,
    instance_norm2d,
    leaky_relu,
    matmul,
    max_all,
    mul,
    pad_nd,
    put_at,
    reshape,
    sigmoid,
    sin,
    sqrt,
    take_at,
    tmean,
    transpose,
    tsum,
    upsample2_nearest,
)
from demotion.errors import ContractViolationError

from oracles import central_difference, conv2d_naive

RNG = np.random.default_rng(7)


def fd_check(fn, x0, h=1e-6, rtol=1e-6, atol=1e-9):
    """Compare grad_of against central differences on every coordinate."""
    leaf = Tensor(x0, requires_grad=True)
    out = fn(leaf)
    (g,) = grad_of(out, [leaf])
    fd = central_difference(lambda x: fn(Tensor(x)).data.sum(), x0, h)
    np.testing.assert_allclose(g.data, fd, rtol=rtol, atol=atol)


# ---------------------------------------------------------------------------
# Elementwise primitives
# ---------------------------------------------------------------------------

def test_rational_expression_gradient():
    x0 = RNG.uniform(0.5, 2.0, size=(3, 4))
    fd_check(lambda x: tsum(div(mul(x, x) - 3.0 * x, x + 2.0)), x0)


def test_sqrt_gradient_and_zero_convention():
    x0 = RNG.uniform(0.5, 4.0, size=(5,))
    fd_check(lambda x: tsum(sqrt(x)), x0)
    leaf = Tensor(np.array([0.0, 4.0]), requires_grad=True)
    (g,) = grad_of(tsum(sqrt(leaf)), [leaf])
    assert g.data[0] == 0.0  # subgradient at the origin
    assert g.data[1] == pytest.approx(0.25)


def test_exp_sin_cos_gradients():
    x0 = RNG.uniform(-1.0, 1.0, size=(4, 3))
    fd_check(lambda x: tsum(exp(x)), x0)
    fd_check(lambda x: tsum(sin(x)), x0)
    fd_check(lambda x: tsum(cos(x)), x0)


def test_absval_gradient_away_from_zero():
    x0 = np.array([-2.0, -0.5, 0.5, 3.0])
    fd_check(lambda x: tsum(absval(x)), x0)
    leaf = Tensor(np.array([0.0]), requires_grad=True)
    (g,) = grad_of(tsum(absval(leaf)), [leaf])
    assert g.data[0] == 0.0


def test_clip_gradient_mask():
    leaf = Tensor(np.array([-3.0, -0.5, 0.5, 3.0]), requires_grad=True)
    (g,) = grad_of(tsum(mul(clip(leaf, -1.0, 1.0), 2.0)), [leaf])
    np.testing.assert_array_equal(g.data, [0.0, 2.0, 2.0, 0.0])


def test_leaky_relu_and_sigmoid_gradients():
    x0 = np.array([-2.0, -0.3, 0.4, 1.7])
    fd_check(lambda x: tsum(leaky_relu(x, 0.01)), x0)
    fd_check(lambda x: tsum(sigmoid(x)), x0, rtol=1e-5)
    out = sigmoid(Tensor(np.array([-800.0, 0.0, 800.0])))
    assert np.all(out.data >= 0.0) and np.all(out.data <= 1.0)
    assert out.data[1] == 0.5


def test_besseli_entire_matches_scipy_and_differentiates():
    t0 = RNG.uniform(0.0, 190.0, size=(40,))
    t0[0] = 0.0  # exercise the series branch endpoints
    t0[1] = 0.2499
    val = besseli_entire(Tensor(t0), 0)
    np.testing.assert_allclose(val.data, scipy_i0(np.sqrt(t0)), rtol=1e-12)
    m2 = besseli_entire(Tensor(t0), 2)
    expect = np.where(t0 > 0, scipy_iv(2, np.sqrt(t0)) / np.maximum((2 * np.sqrt(t0)) ** 2, 1e-300), 1 / 32)
    np.testing.assert_allclose(m2.data[t0 > 0.3], expect[t0 > 0.3], rtol=1e-12)
    assert besseli_entire(Tensor(np.array([0.0])), 2).data[0] == pytest.approx(1 / 32, rel=1e-12)
    # d/dt I_0(sqrt(t)) is the order-1 member; FD confirms the chain end to end
    fd_check(lambda t: tsum(besseli_entire(t, 0)), RNG.uniform(1.0, 50.0, size=(6,)),
             h=1e-5, rtol=1e-5)
    fd_check(lambda t: tsum(besseli_entire(t, 1)), RNG.uniform(1.0, 50.0, size=(6,)),
             h=1e-5, rtol=1e-5)
    with pytest.raises(ContractViolationError):
        besseli_entire(Tensor(np.array([-1.0])), 0)


# ---------------------------------------------------------------------------
# Reductions, broadcasting, movement
# ---------------------------------------------------------------------------

def test_sum_mean_axes():
    x0 = RNG.standard_normal((2, 3, 4))
    w = RNG.standard_normal((2, 1, 4))
    fd_check(lambda x: tsum(mul(tsum(x, axis=(0, 2)), np.array([1.0, 2.0, 3.0]))), x0)
    fd_check(lambda x: tsum(mul(tmean(x, axis=1, keepdims=True), w)), x0)


def test_broadcast_add_and_mul():
    a0 = RNG.standard_normal((3, 1))
    b0 = RNG.standard_normal((1, 4))
    a = Tensor(a0, requires_grad=True)
    b = Tensor(b0, requires_grad=True)
    out = tsum(mul(a + b, a))
    ga, gb = grad_of(out, [a, b])
    fa = central_difference(lambda x: np.sum((x + b0) * x), a0, 1e-6)
    fb = central_difference(lambda x: np.sum((a0 + x) * a0), b0, 1e-6)
    np.testing.assert_allclose(ga.data, fa, rtol=1e-6)
    np.testing.assert_allclose(gb.data, fb, rtol=1e-6)


def test_broadcast_to_explicit():
    x0 = RNG.standard_normal((3, 1))
    w = RNG.standard_normal((3, 5))
    fd_check(lambda x: tsum(mul(broadcast_to(x, (3, 5)), w)), x0)


def test_reshape_transpose_gradients():
    x0 = RNG.standard_normal((2, 6))
    w = RNG.standard_normal((3, 2, 2))
    fd_check(lambda x: tsum(mul(reshape(x, (3, 2, 2)), w)), x0)
    w2 = RNG.standard_normal((6, 2))
    fd_check(lambda x: tsum(mul(transpose(x, (1, 0)), w2)), x0)


def test_max_all_gradient_is_one_hot():
    x0 = np.array([[1.0, 5.0], [3.0, 2.0]])
    leaf = Tensor(x0, requires_grad=True)
    (g,) = grad_of(mul(max_all(leaf), 3.0), [leaf])
    np.testing.assert_array_equal(g.data, [[0.0, 3.0], [0.0, 0.0]])


def test_concat_and_crop_gradients():
    a0 = RNG.standard_normal((2, 3))
    b0 = RNG.standard_normal((2, 2))
    a = Tensor(a0, requires_grad=True)
    b = Tensor(b0, requires_grad=True)
    w = RNG.standard_normal((2, 5))
    out = tsum(mul(concat([a, b], axis=1), w))
    ga, gb = grad_of(out, [a, b])
    np.testing.assert_allclose(ga.data, w[:, :3])
    np.testing.assert_allclose(gb.data, w[:, 3:])
    x0 = RNG.standard_normal((4, 4))
    wp = RNG.standard_normal((5, 7))
    fd_check(lambda x: tsum(crop_nd(x, ((1, 1), (0, 2)))), x0)
    fd_check(lambda x: tsum(mul(pad_nd(x, ((1, 0), (2, 1))), wp)), x0)


def test_take_put_adjoint_pair():
    x0 = RNG.standard_normal(10)
    idx = np.array([[0, 3, 3], [9, 1, 0]])
    y0 = RNG.standard_normal(idx.shape)
    lhs = np.sum(take_at(Tensor(x0), idx).data * y0)
    rhs = np.sum(put_at(Tensor(y0), idx, 10).data * x0)
    assert lhs == pytest.approx(rhs, rel=1e-14)
    w = RNG.standard_normal(idx.shape)
    fd_check(lambda x: tsum(mul(take_at(x, idx), w)), x0)
    fd_check(lambda y: tsum(mul(put_at(y, idx, 10), x0)), y0)


def test_matmul_gradients_2d_and_batched():
    a0 = RNG.standard_normal((3, 4))
    b0 = RNG.standard_normal((4, 2))
    b = Tensor(b0)
    fd_check(lambda a: tsum(matmul(a, b)), a0)
    a = Tensor(a0)
    fd_check(lambda x: tsum(matmul(a, x)), b0)
    # 2-D weight against stacked right operand, as convolution uses it
    w0 = RNG.standard_normal((2, 3))
    c0 = RNG.standard_normal((4, 3, 5))
    c = Tensor(c0)
    ww = RNG.standard_normal((4, 2, 5))
    fd_check(lambda w: tsum(mul(matmul(w, c), ww)), w0, rtol=1e-5)


# ---------------------------------------------------------------------------
# Network blocks
# ---------------------------------------------------------------------------

def test_conv2d_matches_loop_oracle():
    x = RNG.standard_normal((2, 3, 8, 8))
    w = RNG.standard_normal((4, 3, 3, 3))
    b = RNG.standard_normal(4)
    for stride, pad in [(1, 1), (2, 1), (1, 0)]:
        got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad)
        want = conv2d_naive(x, w, b, stride=stride, pad=pad)
        np.testing.assert_allclose(got.data, want, rtol=1e-12, atol=1e-12)


def test_conv2d_gradients():
    x0 = RNG.standard_normal((1, 2, 6, 6))
    w0 = RNG.standard_normal((3, 2, 3, 3))
    b0 = RNG.standard_normal(3)
    xt, wt, bt = Tensor(x0), Tensor(w0), Tensor(b0)
    wa = RNG.standard_normal((1, 3, 3, 3))
    wb = RNG.standard_normal((1, 3, 6, 6))
    fd_check(lambda x: tsum(mul(conv2d(x, wt, bt, stride=2, pad=1), wa)), x0, rtol=1e-5)
    fd_check(lambda w: tsum(mul(conv2d(xt, w, bt, stride=1, pad=1), wb)), w0, rtol=1e-5)
    fd_check(lambda b: tsum(conv2d(xt, wt, b, stride=1, pad=1)), b0, rtol=1e-5)
    with pytest.raises(ContractViolationError):
        conv2d(Tensor(np.zeros((1, 3, 6, 6))), wt)


def test_instance_norm_statistics_and_gradient():
    x0 = RNG.standard_normal((2, 3, 5, 5)) * 4.0 + 2.0
    gamma0 = np.ones(3)
    beta0 = np.zeros(3)
    out = instance_norm2d(Tensor(x0), Tensor(gamma0), Tensor(beta0))
    np.testing.assert_allclose(out.data.mean(axis=(2, 3)), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.data.var(axis=(2, 3)), 1.0, atol=1e-4)
    w = RNG.standard_normal((1, 2, 4, 4))
    g0 = RNG.uniform(0.5, 1.5, 2)
    be0 = RNG.standard_normal(2)
    x1 = RNG.standard_normal((1, 2, 4, 4))
    fd_check(lambda x: tsum(mul(instance_norm2d(x, Tensor(g0), Tensor(be0)), w)),
             x1, h=1e-6, rtol=1e-4, atol=1e-8)
    fd_check(lambda g: tsum(mul(instance_norm2d(Tensor(x1), g, Tensor(be0)), w)),
             g0, rtol=1e-5)
    fd_check(lambda b: tsum(mul(instance_norm2d(Tensor(x1), Tensor(g0), b), w)),
             be0, rtol=1e-5)


def test_upsample_nearest_and_adjoint():
    x0 = RNG.standard_normal((1, 2, 3, 3))
    out = upsample2_nearest(Tensor(x0))
    want = np.repeat(np.repeat(x0, 2, axis=2), 2, axis=3)
    np.testing.assert_array_equal(out.data, want)
    # adjoint of nearest-neighbour duplication is 2x2 sum pooling
    leaf = Tensor(x0, requires_grad=True)
    up = upsample2_nearest(leaf)
    g_out = RNG.standard_normal(up.data.shape)
    (g,) = grad_of(tsum(mul(up, g_out)), [leaf])
    pooled = g_out.reshape(1, 2, 3, 2, 3, 2).sum(axis=(3, 5))
    np.testing.assert_allclose(g.data, pooled, rtol=1e-12)


# ---------------------------------------------------------------------------
# Engine semantics
# ---------------------------------------------------------------------------

def test_second_derivatives_through_gradient_tensors():
    x = Tensor(np.array([1.3, -0.4, 2.0]), requires_grad=True)
    y = tsum(mul(mul(x, x), x))
    (g,) = grad_of(y, [x])          # 3 x^2
    (g2,) = grad_of(tsum(g), [x])   # 6 x
    np.testing.assert_allclose(g2.data, 6.0 * x.data, rtol=1e-12)
    z = tsum(sin(x))
    (gz,) = grad_of(z, [x])
    (gz2,) = grad_of(tsum(gz), [x])
    np.testing.assert_allclose(gz2.data, -np.sin(x.data), rtol=1e-12)
    # nonlinear in the gradient: h = sum(g^2) with g = 2x gives dh/dx = 8x
    q = tsum(mul(x, x))
    (gq,) = grad_of(q, [x])
    (gh,) = grad_of(tsum(mul(gq, gq)), [x])
    np.testing.assert_allclose(gh.data, 8.0 * x.data, rtol=1e-12)


def test_backward_linearity_and_zero_seed():
    x = Tensor(RNG.standard_normal((3, 3)), requires_grad=True)
    out = mul(sigmoid(x), exp(mul(x, 0.3)))
    seed = RNG.standard_normal((3, 3))
    (g1,) = grad_of(out, [x], grad_output=seed)
    (g2,) = grad_of(out, [x], grad_output=2.0 * seed)
    np.testing.assert_allclose(g2.data, 2.0 * g1.data, atol=1e-10)
    (gz,) = grad_of(out, [x], grad_output=np.zeros((3, 3)))
    np.testing.assert_array_equal(gz.data, 0.0)


def test_backward_accumulates_on_leaves():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = mul(x, x)
    y.backward()
    y2 = mul(x, 3.0)
    y2.backward()
    np.testing.assert_allclose(x.grad, [7.0])  # 2x + 3 accumulated
    x.zero_grad()
    assert x.grad is None


def test_disconnected_input_gets_zero_gradient():
    x = Tensor(np.ones(3), requires_grad=True)
    z = Tensor(np.ones(3), requires_grad=True)
    (gx, gz) = grad_of(tsum(mul(x, 2.0)), [x, z])
    np.testing.assert_array_equal(gx.data, 2.0)
    np.testing.assert_array_equal(gz.data, 0.0)


def test_stop_at_wrt_cuts_history():
    x = Tensor(np.array([1.5]), requires_grad=True)
    y = mul(x, x)
    z = tsum(mul(y, y))
    gy_stop, gx_stop = grad_of(z, [y, x], stop_at_wrt=True)
    np.testing.assert_allclose(gy_stop.data, 2.0 * y.data)
    np.testing.assert_array_equal(gx_stop.data, 0.0)  # pruned below y
    (gx_full,) = grad_of(z, [x])
    np.testing.assert_allclose(gx_full.data, 4.0 * x.data ** 3)


def test_untracked_output_and_bad_seed_rejected():
    with pytest.raises(ContractViolationError):
        grad_of(mul(Tensor(np.ones(2)), 2.0), [Tensor(np.ones(2), requires_grad=True)])
    x = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(ContractViolationError):
        grad_of(mul(x, 2.0), [x])  # non-scalar without explicit seed
    with pytest.raises(ContractViolationError):
        grad_of(tsum(x), [x], grad_output=np.ones(2))


def test_constant_subgraphs_are_pruned():
    a = Tensor(np.ones(4))
    b = mul(a, 3.0)
    assert not b.requires_grad and b._parents == ()
