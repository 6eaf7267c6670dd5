"""Reverse-mode autodiff: each op against central finite differences."""

import numpy as np
import pytest

from cpdrums.nn.tensor import (
    Tensor,
    concat,
    cross_entropy,
    embedding,
    gather_last,
    log_softmax,
    softmax,
    stack,
    use_dtype,
)

EPS = 1e-3
RTOL = 1e-3


def numeric_grad(fn, x: np.ndarray, eps=EPS) -> np.ndarray:
    """Central differences of a scalar-valued fn w.r.t. one input array."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn()
        flat[i] = orig - eps
        lo = fn()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def check(build, *xs, seed=0):
    """build(*tensors) -> scalar Tensor; compare autodiff vs numeric."""
    with use_dtype(np.float64):
        tensors = [Tensor(np.array(x, dtype=np.float64), requires_grad=True)
                   for x in xs]
        out = build(*tensors)
        out.backward()
        for t in tensors:
            want = numeric_grad(lambda: float(build(*tensors).data), t.data)
            got = t.grad
            denom = np.maximum(np.abs(want), 1.0)
            assert np.max(np.abs(got - want) / denom) < RTOL


def rand(rng, *shape):
    return rng.standard_normal(shape)


def test_add_mul_sub_div(rng):
    a, b = rand(rng, 3, 4), rand(rng, 3, 4) + 3.0
    check(lambda x, y: ((x + y) * (x - y) / y).sum(), a, b)


def test_broadcasting_grads(rng):
    a, b = rand(rng, 3, 4), rand(rng, 4)
    check(lambda x, y: (x * y).sum(), a, b)
    c = rand(rng, 3, 1)
    check(lambda x, y: (x + y).mean(), a, c)


def test_pow_exp_log(rng):
    a = np.abs(rand(rng, 5)) + 0.5
    check(lambda x: (x ** 3).sum(), a)
    check(lambda x: x.exp().sum(), a)
    check(lambda x: x.log().sum(), a)


def test_activations(rng):
    a = rand(rng, 4, 3)
    check(lambda x: x.tanh().sum(), a)
    check(lambda x: x.sigmoid().sum(), a)
    # keep ReLU inputs away from the kink
    b = np.where(np.abs(a) < 0.05, 0.5, a)
    check(lambda x: x.relu().sum(), b)


def test_matmul(rng):
    a, b = rand(rng, 3, 4), rand(rng, 4, 2)
    check(lambda x, y: (x @ y).sum(), a, b)
    # batched
    c, d = rand(rng, 2, 3, 4), rand(rng, 2, 4, 2)
    check(lambda x, y: (x @ y).sum(), c, d)


def test_reductions_and_reshape(rng):
    a = rand(rng, 2, 3, 4)
    check(lambda x: x.sum(axis=1).mean(), a)
    check(lambda x: x.mean(axis=0).mean(axis=1).sum(), a)
    check(lambda x: x.reshape(6, 4).sum(), a)
    check(lambda x: x.transpose(2, 0, 1).sum(), a)


def test_getitem_and_pad(rng):
    a = rand(rng, 4, 5)
    check(lambda x: x[1:3, ::2].sum(), a)
    check(lambda x: x.pad(((0, 0), (1, 2))).sum(), a)
    # repeated index accumulates
    idx = np.array([0, 0, 2])
    check(lambda x: x[idx].sum(), a)


def test_concat_stack(rng):
    a, b = rand(rng, 2, 3), rand(rng, 2, 3)
    check(lambda x, y: concat([x, y], axis=1).sum(), a, b)
    check(lambda x, y: stack([x, y], axis=0).sum(), a, b)


def test_embedding_gradient(rng):
    table = rand(rng, 6, 4)
    ids = np.array([[1, 2, 1], [5, 0, 1]])
    check(lambda t: embedding(t, ids).sum(), table)


def test_embedding_range_checked(rng):
    table = Tensor(rand(rng, 4, 2))
    with pytest.raises(IndexError):
        embedding(table, np.array([4]))
    with pytest.raises(IndexError):
        embedding(table, np.array([-1]))


def test_softmax_rows_sum_to_one(rng):
    x = Tensor(rand(rng, 3, 7))
    s = softmax(x).data
    assert np.allclose(s.sum(axis=-1), 1.0)
    assert np.allclose(np.exp(log_softmax(x).data), s)


def test_log_softmax_gradient(rng):
    # Weight by a fixed matrix so the numeric probe sees the same functional.
    a = rand(rng, 3, 5)
    w = rand(rng, 3, 5)
    check(lambda x: (log_softmax(x) * Tensor(w)).sum(), a)


def test_gather_last(rng):
    a = rand(rng, 2, 3, 4)
    idx = np.array([[0, 3, 1], [2, 2, 0]])
    out = gather_last(Tensor(a), idx)
    assert out.shape == (2, 3)
    check(lambda x: gather_last(x, idx).sum(), a)


def test_cross_entropy_masked(rng):
    logits = rand(rng, 2, 4, 5)
    targets = np.array([[1, 2, 0, 3], [4, 0, 0, 1]])
    mask = np.array([[1, 1, 0, 1], [1, 0, 0, 1]], dtype=bool)
    check(lambda x: cross_entropy(x, targets, mask), logits)
    # loss decreases when the right class gains probability
    with use_dtype(np.float64):
        t = Tensor(np.zeros((1, 1, 3)), requires_grad=True)
        loss = cross_entropy(t, np.array([[2]]), np.array([[True]]))
        loss.backward()
        assert t.grad[0, 0, 2] < 0


def test_cross_entropy_all_masked_raises(rng):
    logits = Tensor(rand(rng, 1, 2, 3))
    with pytest.raises(ValueError):
        cross_entropy(logits, np.array([[0, 1]]), np.zeros((1, 2), dtype=bool))


def test_backward_handles_deep_chains():
    # iterative traversal: must not hit the recursion limit
    with use_dtype(np.float64):
        x = Tensor(np.ones(4), requires_grad=True)
        y = x
        for _ in range(5000):
            y = y + 0.001
        y.sum().backward()
        assert np.allclose(x.grad, 1.0)


def test_grad_accumulates_across_uses(rng):
    with use_dtype(np.float64):
        x = Tensor(np.array([2.0, 3.0]), requires_grad=True)
        ((x * x) + x).sum().backward()
        assert np.allclose(x.grad, 2 * x.data + 1)


def test_detach_blocks_gradient():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    (x.detach() * 3).sum().backward()
    assert x.grad is None or np.allclose(x.grad, 0)


def test_default_dtype_is_float32():
    t = Tensor(np.array([1.0]))
    assert t.data.dtype == np.float32
    with use_dtype(np.float64):
        assert Tensor(np.array([1.0])).data.dtype == np.float64
