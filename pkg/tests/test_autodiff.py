import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from freezecl import autodiff as ad
from freezecl.errors import ContractError, DimensionError, EmptyInputError, NumericError


def central_diff(f, x: np.ndarray, eps=1e-6):
    """Numeric gradient of scalar f at x, independent of the tape."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return g


def test_tensor_shape_matches_buffer():
    t = ad.Tensor([[1, 2, 3], [4, 5, 6]])
    assert t.shape == (2, 3)
    assert np.prod(t.shape) == t.values.size
    assert t.data.dtype == np.float64
    assert t.grad is None


# matmul

def test_matmul_identity(rng):
    A = rng.normal(size=(3, 3))
    np.testing.assert_array_equal(ad.matmul(A, np.eye(3)).data, A)


def test_matmul_hand_expansion():
    out = ad.matmul([[1, 2], [3, 4]], [[1], [1]])
    np.testing.assert_array_equal(out.data, [[3], [7]])


def test_matmul_grad_is_row_sums_of_b(rng):
    A = ad.Tensor(rng.normal(size=(3, 4)), trainable=True)
    B = rng.normal(size=(4, 2))
    with ad.Tape() as tape:
        loss = ad.sum_rows(ad.sum_rows(ad.matmul(A, B)))
    tape.backward(loss)
    expected = np.tile(B.sum(axis=1), (3, 1))
    np.testing.assert_allclose(A.grad, expected, rtol=1e-12)
    numeric = central_diff(lambda: (A.data @ B).sum(), A.data)
    np.testing.assert_allclose(A.grad, numeric, rtol=1e-6, atol=1e-8)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


# elementwise

def test_relu_sign_mask():
    np.testing.assert_array_equal(ad.relu([-1.0, 0.0, 2.0]).data, [0, 0, 2])


def test_relu_subgradient_at_zero_is_zero():
    x = ad.Tensor([-1.0, 0.0, 2.0], trainable=True)
    with ad.Tape() as tape:
        loss = ad.reduce_mean(ad.relu(x))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [0, 0, 1 / 3])


def test_add_bias_broadcast():
    out = ad.add_bias([[1, 2], [3, 4]], [10, 20])
    np.testing.assert_array_equal(out.data, [[11, 22], [13, 24]])


def test_add_bias_rejects_column_bias():
    with pytest.raises(DimensionError):
        ad.add_bias(np.ones((2, 3)), np.ones(2))


def test_add_rejects_mismatched_shapes():
    with pytest.raises(DimensionError):
        ad.add(np.ones((2, 2)), np.ones((2, 3)))


def test_scale():
    np.testing.assert_array_equal(ad.scale([1, 2], 0.5).data, [0.5, 1.0])


# reductions

def test_log_softmax_uniform():
    np.testing.assert_allclose(ad.log_softmax_rows([[0.0, 0.0]]).data, [[-math.log(2)] * 2], rtol=1e-15)


def test_reduce_mean():
    assert ad.reduce_mean([1, 2, 3, 6]).item() == 3


def test_squared_l2_rows():
    np.testing.assert_array_equal(ad.squared_l2_rows([[3, 4]]).data, [25])


@pytest.mark.parametrize("op", [ad.reduce_mean, ad.log_softmax_rows, ad.squared_l2_rows])
def test_reductions_reject_empty(op):
    with pytest.raises(EmptyInputError):
        op(np.zeros((0, 2)))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 5)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_log_softmax_rows_normalize(x):
    out = ad.log_softmax_rows(x).data
    assert np.isfinite(out).all()
    np.testing.assert_allclose(np.exp(out).sum(axis=1), 1.0, atol=1e-9)


# backward

def test_linear_grad_equals_input():
    x = np.array([0.5, -2.0, 3.0])
    w = ad.Tensor([1.0, 1.0, 1.0], trainable=True)
    with ad.Tape() as tape:
        loss = ad.sum_rows(ad.mul(w, x))
    tape.backward(loss)
    np.testing.assert_array_equal(w.grad, x)


def test_mlp_layer_grad_matches_finite_differences(rng):
    W = ad.Tensor(rng.normal(size=(3, 4)), trainable=True)
    b = ad.Tensor(rng.normal(size=4) * 0.1, trainable=True)
    X = rng.normal(size=(5, 3))

    def value():
        return ad.reduce_mean(ad.relu(ad.add_bias(ad.matmul(X, W), b)))

    with ad.Tape() as tape:
        loss = value()
    tape.backward(loss)
    for p in (W, b):
        numeric = central_diff(lambda: value().item(), p.data)
        err = np.abs(p.grad - numeric) / np.maximum(1.0, np.abs(numeric))
        assert err.max() < 1e-4


def test_backward_twice_accumulates(rng):
    w = ad.Tensor(rng.normal(size=3), trainable=True)
    with ad.Tape() as tape:
        loss = ad.reduce_mean(ad.mul(w, w))
    tape.backward(loss)
    first = w.grad.copy()
    tape.backward(loss)
    np.testing.assert_array_equal(w.grad, 2 * first)


def test_backward_rejects_non_scalar():
    w = ad.Tensor([1.0, 2.0], trainable=True)
    with ad.Tape() as tape:
        out = ad.scale(w, 2.0)
    with pytest.raises(ContractError):
        tape.backward(out)


def test_unused_parameter_gets_exact_zero_grad():
    w = ad.Tensor([1.0, 2.0], trainable=True)
    unused = ad.Tensor([[5.0]], trainable=True)
    with ad.Tape() as tape:
        loss = ad.reduce_mean(ad.mul(w, w))
    tape.backward(loss, [w, unused])
    np.testing.assert_array_equal(unused.grad, [[0.0]])


def test_ops_outside_tape_are_not_recorded():
    w = ad.Tensor([1.0], trainable=True)
    with ad.Tape() as tape:
        pass
    ad.scale(w, 3.0)
    assert len(tape) == 0


def test_constant_inputs_are_not_recorded():
    with ad.Tape() as tape:
        ad.matmul(np.ones((2, 2)), np.ones((2, 2)))
    assert len(tape) == 0


def test_backward_is_deterministic(rng):
    X = rng.normal(size=(6, 3))
    W0 = rng.normal(size=(3, 2))
    grads = []
    for _ in range(2):
        W = ad.Tensor(W0, trainable=True)
        with ad.Tape() as tape:
            loss = ad.reduce_mean(ad.log_softmax_rows(ad.matmul(X, W)))
        tape.backward(loss)
        grads.append(W.grad.tobytes())
    assert grads[0] == grads[1]


def test_take_rows_with_repeats_accumulates():
    x = ad.Tensor([[1.0, 2.0], [3.0, 4.0]], trainable=True)
    with ad.Tape() as tape:
        loss = ad.reduce_mean(ad.take_rows(x, [0, 0, 1]))
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, [[2 / 6, 2 / 6], [1 / 6, 1 / 6]])


def test_l2_normalize_rows_grad(rng):
    x = ad.Tensor(rng.normal(size=(3, 4)), trainable=True)
    c = rng.normal(size=(3, 4))
    err = ad.grad_check(lambda: ad.reduce_mean(ad.mul(ad.l2_normalize_rows(x), c)), [x])
    assert err < 1e-6


# grad_check

def test_grad_check_quadratic():
    w = ad.Tensor([0.3, -1.2, 2.0], trainable=True)
    err = ad.grad_check(lambda: ad.scale(ad.sum_rows(ad.mul(w, w)), 0.5), [w])
    assert err < 1e-8
    np.testing.assert_allclose(w.grad, w.data)


def test_grad_check_mlp_cross_entropy(rng):
    from freezecl.losses import cross_entropy
    W1 = ad.Tensor(rng.normal(size=(3, 4)), trainable=True)
    b1 = ad.Tensor(rng.uniform(0.05, 0.2, size=4), trainable=True)
    W2 = ad.Tensor(rng.normal(size=(4, 2)), trainable=True)
    X = rng.normal(size=(8, 3))
    y = np.arange(8) % 2

    def loss():
        h = ad.relu(ad.add_bias(ad.matmul(X, W1), b1))
        return cross_entropy(ad.matmul(h, W2), y)

    assert ad.grad_check(loss, [W1, b1, W2]) < 1e-4


def test_grad_check_full_objective():
    from freezecl.losses import dfwf_grad_check
    err, n = dfwf_grad_check(seed=3)
    assert n == 32
    assert err < 1e-4


def test_grad_check_rejects_non_finite():
    w = ad.Tensor([1.0], trainable=True)
    with pytest.raises(NumericError):
        ad.grad_check(lambda: ad.scale(w, float("inf")), [w])
