"""Autodiff engine tests against brute-force oracles and finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gauda.tensor import (NonFiniteError, Tensor, add, concat_cols, log, matmul,
                          mean, mul, relu, reshape, softmax, square, tsum)


def loop_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = rng.normal(size=(4, 6))
        b = rng.normal(size=(6, 3))
        got = matmul(Tensor(a), Tensor(b)).numpy()
        np.testing.assert_allclose(got, loop_matmul(a, b), atol=1e-12)


def test_matmul_gradients_are_transposed_products():
    rng = np.random.default_rng(1)
    a = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    b = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
    mean(matmul(a, b)).backward()
    g = np.full((3, 2), 1.0 / 6.0)
    np.testing.assert_allclose(a.grad, g @ b.data.T, atol=1e-12)
    np.testing.assert_allclose(b.grad, a.data.T @ g, atol=1e-12)


def test_matmul_rejects_bad_shapes():
    with pytest.raises(ValueError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    with pytest.raises(ValueError):
        matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))


def test_scalar_nodes_keep_zero_dim_shape():
    # regression: contiguity coercion used to promote 0-d outputs to (1,)
    x = Tensor(np.ones((3, 3)), requires_grad=True)
    m = mean(x)
    assert m.shape == ()
    m.backward()
    np.testing.assert_allclose(x.grad, np.full((3, 3), 1.0 / 9.0))


def test_backward_rejects_non_scalar_root():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        add(x, x).backward()


def test_reuse_accumulates_gradient():
    # y = x*x + x, dy/dx = 2x + 1
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    tsum(add(mul(x, x), x)).backward()
    np.testing.assert_allclose(x.grad, 2.0 * x.data + 1.0, atol=1e-12)


@given(arrays(np.float64, (3, 4), elements=st.floats(-10, 10)),
       arrays(np.float64, (4,), elements=st.floats(-10, 10)))
@settings(max_examples=60, deadline=None)
def test_broadcast_add_unbroadcasts_gradient(a, b):
    ta = Tensor(a, requires_grad=True)
    tb = Tensor(b, requires_grad=True)
    tsum(add(ta, tb)).backward()
    np.testing.assert_allclose(ta.grad, np.ones((3, 4)))
    np.testing.assert_allclose(tb.grad, np.full((4,), 3.0))


@given(arrays(np.float64, (2, 3), elements=st.floats(-5, 5)),
       arrays(np.float64, (3,), elements=st.floats(-5, 5)))
@settings(max_examples=60, deadline=None)
def test_broadcast_mul_gradients(a, b):
    ta = Tensor(a, requires_grad=True)
    tb = Tensor(b, requires_grad=True)
    tsum(mul(ta, tb)).backward()
    np.testing.assert_allclose(ta.grad, np.broadcast_to(b, (2, 3)), atol=1e-12)
    np.testing.assert_allclose(tb.grad, a.sum(axis=0), atol=1e-12)


@given(arrays(np.float64, (4, 5), elements=st.floats(-30, 30)))
@settings(max_examples=80, deadline=None)
def test_softmax_rows_are_distributions(logits):
    s = softmax(Tensor(logits)).numpy()
    assert np.all(s >= 0.0)
    np.testing.assert_allclose(s.sum(axis=-1), np.ones(4), atol=1e-12)


@given(arrays(np.float64, (3, 4), elements=st.floats(-20, 20)),
       st.floats(-50, 50))
@settings(max_examples=60, deadline=None)
def test_softmax_shift_invariance(logits, shift):
    a = softmax(Tensor(logits)).numpy()
    b = softmax(Tensor(logits + shift)).numpy()
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_softmax_gradient_rows_sum_to_zero():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(5, 6)), requires_grad=True)
    w = Tensor(rng.normal(size=(5, 6)))
    tsum(mul(softmax(x), w)).backward()
    np.testing.assert_allclose(x.grad.sum(axis=-1), np.zeros(5), atol=1e-12)


def test_relu_masks_negatives_and_subgradient_zero_at_kink():
    x = Tensor(np.array([-2.0, 0.0, 3.0]), requires_grad=True)
    tsum(relu(x)).backward()
    np.testing.assert_array_equal(relu(x).numpy(), [0.0, 0.0, 3.0])
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_log_gradient_is_reciprocal():
    x = Tensor(np.array([0.5, 2.0, 4.0]), requires_grad=True)
    tsum(log(x)).backward()
    np.testing.assert_allclose(x.grad, 1.0 / x.data, atol=1e-12)


def test_log_of_zero_raises_non_finite():
    with pytest.raises(NonFiniteError):
        log(Tensor(np.array([1.0, 0.0])))


def test_reshape_round_trips_values_and_gradients():
    x = Tensor(np.arange(12, dtype=np.float64).reshape(3, 4), requires_grad=True)
    y = reshape(x, (2, 6))
    np.testing.assert_array_equal(y.numpy().ravel(), x.numpy().ravel())
    w = np.arange(12, dtype=np.float64).reshape(2, 6)
    tsum(mul(y, Tensor(w))).backward()
    np.testing.assert_array_equal(x.grad, w.reshape(3, 4))


def test_sum_and_square_compositions():
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    assert tsum(x).item() == pytest.approx(2.0)
    loss = tsum(square(x))
    assert loss.item() == pytest.approx(14.0)
    loss.backward()
    np.testing.assert_allclose(x.grad, 2.0 * x.data, atol=1e-12)


def test_concat_cols_matches_numpy_and_routes_gradients():
    rng = np.random.default_rng(9)
    a = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    joined = concat_cols([a, b])
    np.testing.assert_allclose(
        joined.numpy(), np.concatenate([a.numpy(), b.numpy()], axis=1), atol=1e-12)
    w = rng.normal(size=(4, 5))
    tsum(mul(joined, Tensor(w))).backward()
    np.testing.assert_allclose(a.grad, w[:, :2], atol=1e-12)
    np.testing.assert_allclose(b.grad, w[:, 2:], atol=1e-12)


def test_concat_cols_rejects_non_2d():
    with pytest.raises(ValueError):
        concat_cols([Tensor(np.ones(3))])


def test_requires_grad_propagates_and_detach_cuts():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    assert add(x, 1.0).requires_grad
    assert not add(x.detach(), 1.0).requires_grad
    assert not add(Tensor(np.ones((2, 2))), 2.0).requires_grad


def central_difference(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    grad = np.zeros_like(x)
    flat = x.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        up = f(x)
        flat[i] = keep - eps
        down = f(x)
        flat[i] = keep
        grad.ravel()[i] = (up - down) / (2.0 * eps)
    return grad


def test_composite_expression_against_finite_differences():
    rng = np.random.default_rng(11)
    x0 = rng.normal(size=(3, 4))
    w0 = rng.normal(size=(4, 2))

    def f(x):
        t = matmul(Tensor(x), Tensor(w0))
        return mean(square(softmax(relu(t)))).item()

    x = Tensor(x0.copy(), requires_grad=True)
    mean(square(softmax(relu(matmul(x, Tensor(w0)))))).backward()
    np.testing.assert_allclose(x.grad, central_difference(f, x0.copy()),
                               rtol=1e-5, atol=1e-8)
