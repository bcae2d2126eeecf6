"""Tensor kernel tests: ops against brute-force oracles, tape vs finite differences."""

import numpy as np
import pytest

from kolnet import kernel
from kolnet.kernel import (
    DegenerateBatchError,
    RunningStats,
    ShapeError,
    Tensor,
    backprop,
    batch_norm,
    constant,
    finite_diff_grad,
    grad_check,
    layer_norm,
    leaf,
    matmul,
    relu,
)


def matmul_reference(a, b):
    """Independent triple-loop product."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for r in range(k):
                acc += a[i, r] * b[r, j]
            out[i, j] = acc
    return out


def test_matmul_identity():
    rng = np.random.default_rng(0)
    a = rng.uniform(-1, 1, (2, 2))
    assert np.array_equal(matmul(np.eye(2), a).array, a)


def test_matmul_scalar_case():
    assert matmul([[2.0]], [[3.0]]).array == np.array([[6.0]])


def test_matmul_vs_triple_loop():
    rng = np.random.default_rng(1)
    a = rng.uniform(-1, 1, (3, 3))
    b = rng.uniform(-1, 1, (3, 3))
    assert np.abs(matmul(a, b).array - matmul_reference(a, b)).max() < 1e-14


def test_matmul_associative_within_tolerance():
    rng = np.random.default_rng(2)
    for m, k, n, p in [(2, 3, 4, 5), (8, 8, 8, 8), (5, 2, 7, 3)]:
        a = rng.uniform(-1, 1, (m, k))
        b = rng.uniform(-1, 1, (k, n))
        c = rng.uniform(-1, 1, (n, p))
        left = matmul(matmul(a, b), c).array
        right = matmul_reference(a, matmul_reference(b, c))
        assert np.abs(left - right).max() < 1e-12


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        matmul(np.zeros(3), np.zeros((3, 1)))


def test_relu_values_and_gradient():
    x = leaf(np.array([[-1.0, 0.0, 2.0]]))
    out = relu(x)
    assert np.array_equal(out.array, [[0.0, 0.0, 2.0]])
    grads = backprop(kernel.total(out))
    # subgradient 0 both for negative inputs and at exactly 0
    assert np.array_equal(grads[x.node], [[0.0, 0.0, 1.0]])


def test_relu_gradient_at_negative_point():
    x = leaf(np.array([[-3.0]]))
    grads = backprop(kernel.total(relu(x)))
    assert grads[x.node][0, 0] == 0.0


def test_backprop_square():
    x = leaf(np.array([[3.0]]))
    y = kernel.mul(x, x)
    grads = backprop(kernel.total(y))
    assert grads[x.node][0, 0] == pytest.approx(6.0, abs=1e-14)


def test_backprop_fanout_accumulates():
    x = leaf(np.array([[2.0]]))
    y = kernel.add(x, x)
    grads = backprop(kernel.total(y))
    assert grads[x.node][0, 0] == 2.0


def test_backprop_requires_scalar_loss():
    x = leaf(np.ones((2, 2)))
    with pytest.raises(ShapeError):
        backprop(relu(x))
    with pytest.raises(ValueError):
        backprop(constant(np.ones(1)))


def test_two_layer_net_matches_finite_differences():
    rng = np.random.default_rng(3)
    w1 = rng.uniform(-1, 1, (4, 6))
    w2 = rng.uniform(-1, 1, (6, 1))
    x = rng.uniform(-1, 1, (5, 4))

    def value(theta):
        a = theta[:24].reshape(4, 6)
        b = theta[24:].reshape(6, 1)
        return float((np.maximum(x @ a, 0.0) @ b).sum())

    theta = np.concatenate([w1.reshape(-1), w2.reshape(-1)])
    w1_t, w2_t = leaf(w1), leaf(w2)
    out = matmul(relu(matmul(constant(x), w1_t)), w2_t)
    grads = backprop(kernel.total(out))
    analytic = np.concatenate([grads[w1_t.node].reshape(-1),
                               grads[w2_t.node].reshape(-1)])
    report = grad_check(value, theta, analytic, h=1e-5)
    assert report.max_rel_error <= 1e-6


def test_finite_diff_quadratic():
    grad = finite_diff_grad(lambda t: float(t[0] ** 2), np.array([3.0]), 1e-5)
    assert grad[0] == pytest.approx(6.0, abs=1e-8)


def test_finite_diff_constant():
    grad = finite_diff_grad(lambda t: 1.5, np.arange(4.0), 1e-5)
    assert np.array_equal(grad, np.zeros(4))


def test_finite_diff_needs_positive_step():
    with pytest.raises(ValueError):
        finite_diff_grad(lambda t: 0.0, np.zeros(2), 0.0)


def test_batch_norm_two_point_column():
    x = np.array([[1.0], [-1.0]])
    state = RunningStats(mean=np.zeros(1), var=np.ones(1))
    out = batch_norm(x, np.ones(1), np.zeros(1), state, mode="train", eps=1e-5)
    z = 1.0 / np.sqrt(1.0 + 1e-5)
    assert np.allclose(out.array, [[z], [-z]], atol=1e-14)


def test_batch_norm_constant_column_gives_shift():
    x = np.full((8, 3), 4.2)
    shift = np.array([1.0, -2.0, 0.5])
    state = RunningStats(mean=np.zeros(3), var=np.ones(3))
    out = batch_norm(x, np.ones(3), shift, state, mode="train", eps=1e-3)
    assert np.allclose(out.array, np.broadcast_to(shift, (8, 3)), atol=1e-9)


def test_batch_norm_eval_identity():
    x = np.random.default_rng(4).uniform(-2, 2, (6, 3))
    state = RunningStats(mean=np.zeros(3), var=np.ones(3))
    out = batch_norm(x, np.ones(3), np.zeros(3), state, mode="eval", eps=0.0)
    assert np.allclose(out.array, x, atol=1e-15)
    # eval mode must not touch the running statistics
    assert np.array_equal(state.mean, np.zeros(3))
    assert np.array_equal(state.var, np.ones(3))


def test_batch_norm_degenerate_batch():
    state = RunningStats(mean=np.zeros(2), var=np.ones(2))
    with pytest.raises(DegenerateBatchError):
        batch_norm(np.ones((1, 2)), np.ones(2), np.zeros(2), state, mode="train")


def test_batch_norm_standardizes_batch():
    rng = np.random.default_rng(5)
    x = rng.uniform(-3, 5, (512, 7))
    state = RunningStats(mean=np.zeros(7), var=np.ones(7))
    out = batch_norm(x, np.ones(7), np.zeros(7), state, mode="train", eps=1e-5).array
    assert np.abs(out.mean(axis=0)).max() <= 1e-10
    var = out.var(axis=0)
    expected = x.var(axis=0) / (x.var(axis=0) + 1e-5)
    assert np.abs(var - expected).max() <= 1e-8


def test_batch_norm_running_update_rule():
    rng = np.random.default_rng(6)
    x = rng.uniform(0, 1, (64, 2))
    state = RunningStats(mean=np.full(2, 0.3), var=np.full(2, 2.0))
    batch_norm(x, np.ones(2), np.zeros(2), state, mode="train", eps=1e-5, momentum=0.1)
    mu = x.mean(axis=0)
    unbiased = x.var(axis=0) * 64 / 63
    assert np.allclose(state.mean, 0.9 * 0.3 + 0.1 * mu, atol=1e-12)
    assert np.allclose(state.var, 0.9 * 2.0 + 0.1 * unbiased, atol=1e-12)


def test_layer_norm_row():
    out = layer_norm(np.array([[1.0, -1.0]]), np.ones(2), np.zeros(2), eps=1e-5)
    z = 1.0 / np.sqrt(1.0 + 1e-5)
    assert np.allclose(out.array, [[z, -z]], atol=1e-14)


def test_layer_norm_constant_row_and_single_feature():
    shift = np.array([0.7])
    out = layer_norm(np.full((4, 1), 9.0), np.ones(1), shift, eps=1e-5)
    assert np.allclose(out.array, np.full((4, 1), 0.7), atol=1e-12)
    out2 = layer_norm(np.full((3, 5), 2.0), np.ones(5), np.full(5, -1.0), eps=1e-4)
    assert np.allclose(out2.array, -1.0, atol=1e-12)


def test_eval_forward_is_pure():
    rng = np.random.default_rng(7)
    x = rng.uniform(-1, 1, (10, 4))
    state = RunningStats(mean=rng.uniform(-1, 1, 4), var=rng.uniform(0.5, 2, 4))
    a = batch_norm(x, np.ones(4), np.zeros(4), state, mode="eval").array
    b = batch_norm(x, np.ones(4), np.zeros(4), state, mode="eval").array
    assert np.array_equal(a, b)


def test_norm_gradients_match_finite_differences():
    rng = np.random.default_rng(8)
    x0 = rng.uniform(-1, 1, (12, 3))
    scale0 = rng.uniform(0.5, 1.5, 3)
    shift0 = rng.uniform(-0.5, 0.5, 3)

    for which in ("batch-train", "batch-eval", "layer"):
        def value(theta, which=which):
            x = theta[:36].reshape(12, 3)
            sc = theta[36:39]
            sh = theta[39:]
            state = RunningStats(mean=np.full(3, 0.1), var=np.full(3, 1.3))
            if which == "batch-train":
                out = batch_norm(x, sc, sh, state, mode="train")
            elif which == "batch-eval":
                out = batch_norm(x, sc, sh, state, mode="eval")
            else:
                out = layer_norm(x, sc, sh)
            return float((out.array ** 2).sum())

        theta = np.concatenate([x0.reshape(-1), scale0, shift0])
        x_t, sc_t, sh_t = leaf(x0), leaf(scale0), leaf(shift0)
        state = RunningStats(mean=np.full(3, 0.1), var=np.full(3, 1.3))
        if which == "batch-train":
            out = batch_norm(x_t, sc_t, sh_t, state, mode="train")
        elif which == "batch-eval":
            state = RunningStats(mean=np.full(3, 0.1), var=np.full(3, 1.3))
            out = batch_norm(x_t, sc_t, sh_t, state, mode="eval")
        else:
            out = layer_norm(x_t, sc_t, sh_t)
        grads = backprop(kernel.total(kernel.square(out)))
        analytic = np.concatenate([grads[x_t.node].reshape(-1),
                                   grads[sc_t.node], grads[sh_t.node]])
        report = grad_check(value, theta, analytic, h=1e-6)
        assert report.max_rel_error <= 1e-5, which


def test_bias_broadcast_gradient():
    x = leaf(np.ones((4, 3)))
    b = leaf(np.array([1.0, 2.0, 3.0]))
    out = kernel.add(x, b)
    grads = backprop(kernel.total(out))
    assert np.array_equal(grads[b.node], np.full(3, 4.0))
    assert np.array_equal(grads[x.node], np.ones((4, 3)))


def test_min_op_count():
    x = leaf(np.ones((2, 2)))
    w1 = leaf(np.ones((2, 2)))
    w2 = leaf(np.ones((2, 2)))
    deep = matmul(matmul(x, w1), w2)
    short = matmul(x, w2)
    both = kernel.add(deep, short)
    assert kernel.min_op_count(both, x, op="matmul") == 1
    assert kernel.min_op_count(deep, x, op="matmul") == 2
