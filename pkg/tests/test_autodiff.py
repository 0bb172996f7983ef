import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neopain.autodiff import (Tensor, backward, check_gradients, finite_difference_check, no_grad, ops,
                              relative_error)
from conftest import away_from_zero

TOL = 1e-4


def weighted_sum(out, w):
    return ops.reduce_sum(out * Tensor(w))


def op_grad_error(f, x, rng):
    """Max relative error of d sum(w * f(x)) / dx with fixed random weights."""
    x = Tensor(x, requires_grad=True)
    w = rng.normal(size=np.shape(f(Tensor(x.data)).data))
    return finite_difference_check(lambda t: weighted_sum(f(t), w), x)


UNARY = {
    "neg": (lambda t: -t, lambda r: r.normal(size=(3, 4))),
    "square": (ops.square, lambda r: r.normal(size=(3, 4))),
    "absolute": (ops.absolute, lambda r: away_from_zero(r, (3, 4))),
    "relu": (ops.relu, lambda r: away_from_zero(r, (3, 4))),
    "tanh": (ops.tanh, lambda r: r.normal(size=(3, 4))),
    "hard_sigmoid": (ops.hard_sigmoid, lambda r: r.uniform(-2.3, 2.3, size=(3, 4))),
    "linear": (ops.linear, lambda r: r.normal(size=(3, 4))),
    "signed_sqrt": (ops.signed_sqrt, lambda r: away_from_zero(r, (3, 4), margin=0.2, scale=2.0)),
    "l2_normalize": (lambda t: ops.l2_normalize(t, axis=-1), lambda r: r.normal(size=(3, 4))),
    "l2_normalize_axis0": (lambda t: ops.l2_normalize(t, axis=0), lambda r: r.normal(size=(3, 4))),
    "sum": (lambda t: ops.reduce_sum(t, axis=1), lambda r: r.normal(size=(3, 4))),
    "sum_keepdims": (lambda t: ops.reduce_sum(t, axis=0, keepdims=True), lambda r: r.normal(size=(3, 4))),
    "mean": (lambda t: ops.mean(t, axis=0), lambda r: r.normal(size=(3, 4))),
    "reshape": (lambda t: ops.reshape(t, (4, 3)), lambda r: r.normal(size=(3, 4))),
    "transpose": (lambda t: ops.transpose(t, (1, 0)), lambda r: r.normal(size=(3, 4))),
    "index_basic": (lambda t: t[1:, ::2], lambda r: r.normal(size=(3, 4))),
    "index_advanced": (lambda t: ops.index(t, np.array([0, 2, 0])), lambda r: r.normal(size=(3, 4))),
    "maxpool2d": (lambda t: ops.maxpool2d(t, 2), lambda r: r.permutation(64).reshape(1, 4, 4, 4) / 10.0),
    "dropout_eval": (lambda t: ops.dropout(t, 0.5, None, False), lambda r: r.normal(size=(3, 4))),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_op_gradients(name, rng):
    f, make = UNARY[name]
    assert op_grad_error(f, make(rng), rng) <= TOL


BINARY = {
    "add": ops.add, "sub": ops.sub, "mul": ops.mul, "div": ops.div,
}


@pytest.mark.parametrize("name", sorted(BINARY))
@pytest.mark.parametrize("shape_b", [(3, 4), (4,), (1, 4), (3, 1)])
def test_binary_op_gradients_with_broadcasting(name, shape_b, rng):
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.uniform(0.5, 1.5, size=shape_b), requires_grad=True)
    w = rng.normal(size=(3, 4))
    err = check_gradients(lambda: weighted_sum(BINARY[name](a, b), w), [a, b])
    assert err <= TOL


@pytest.mark.parametrize("shapes", [((3, 4), (4, 5)), ((2, 3, 4), (4, 5)), ((2, 3, 4), (2, 4, 5)), ((5, 2, 3, 4), (4, 2))])
def test_matmul_gradients(shapes, rng):
    a = Tensor(rng.normal(size=shapes[0]), requires_grad=True)
    b = Tensor(rng.normal(size=shapes[1]), requires_grad=True)
    out_shape = np.matmul(a.data, b.data).shape
    w = rng.normal(size=out_shape)
    assert check_gradients(lambda: weighted_sum(ops.matmul(a, b), w), [a, b]) <= TOL


@pytest.mark.parametrize("padding", [0, 1])
@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_gradients(padding, stride, rng):
    x = Tensor(rng.normal(size=(2, 5, 5, 2)), requires_grad=True)
    k = Tensor(rng.normal(size=(3, 3, 2, 3)), requires_grad=True)
    bias = Tensor(rng.normal(size=3), requires_grad=True)
    out_shape = ops.conv2d(x, k, bias, stride=stride, padding=padding).shape
    w = rng.normal(size=out_shape)
    err = check_gradients(lambda: weighted_sum(ops.conv2d(x, k, bias, stride=stride, padding=padding), w),
                          [x, k, bias])
    assert err <= TOL


def test_concatenate_and_stack_gradients(rng):
    a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
    c = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    w1, w2 = rng.normal(size=(2, 5)), rng.normal(size=(2, 2, 3))
    err = check_gradients(lambda: weighted_sum(ops.concatenate([a, b], axis=1), w1)
                          + weighted_sum(ops.stack([a, c], axis=1), w2), [a, b, c])
    assert err <= TOL


def test_mse_gradient(rng):
    pred = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    target = rng.normal(size=(4, 3))
    assert finite_difference_check(lambda p: ops.mse(p, target), pred) <= TOL


def test_lstm_recurrence_gradients(rng):
    proj = Tensor(rng.normal(scale=0.8, size=(2, 5, 12)), requires_grad=True)
    w_h = Tensor(rng.normal(scale=0.5, size=(3, 12)), requires_grad=True)
    w = rng.normal(size=(2, 5, 3))
    assert check_gradients(lambda: weighted_sum(ops.lstm_recurrence(proj, w_h), w), [proj, w_h]) <= TOL


def test_fused_lstm_matches_unrolled_primitives(rng):
    from neopain.temporal import LSTMLayer

    layer = LSTMLayer(4, 3, rng)
    seq = Tensor(rng.normal(size=(2, 6, 4)))
    np.testing.assert_allclose(layer(seq).data, layer.unrolled(seq).data, rtol=0, atol=1e-14)


# -- engine semantics --------------------------------------------------------


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_leaf_gradients_accumulate_across_backward_calls():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    ops.reduce_sum(x * x).backward()
    ops.reduce_sum(x * x).backward()
    np.testing.assert_allclose(x.grad, [4.0, 8.0])


def test_shared_subexpression_gradient_sums_paths():
    x = Tensor(np.array(3.0).reshape(1), requires_grad=True)
    y = x * x
    ops.reduce_sum(y + y * x).backward()
    # d/dx (x^2 + x^3) = 2x + 3x^2
    np.testing.assert_allclose(x.grad, [2 * 3 + 3 * 9])


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert y.is_leaf and not y.requires_grad


def test_module_backward_zero_fills_unreachable_params():
    a = Tensor(np.ones(2), requires_grad=True)
    unused = Tensor(np.ones(3), requires_grad=True)
    backward(ops.reduce_sum(a * 3.0), [a, unused])
    np.testing.assert_array_equal(unused.grad, np.zeros(3))
    np.testing.assert_array_equal(a.grad, [3.0, 3.0])


def test_tensor_rejects_empty_dimensions():
    with pytest.raises(ValueError):
        Tensor(np.zeros((0, 3)))


def test_integer_input_promoted_to_float64():
    assert Tensor([1, 2]).dtype == np.float64


def test_python_scalars_keep_float32_precision():
    x = Tensor(np.ones(3, dtype=np.float32))
    assert (x * 0.5 + 1.0).dtype == np.float32


def test_broadcast_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


def test_matmul_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    with pytest.raises(ValueError):
        ops.matmul(Tensor(np.ones(4)), Tensor(np.ones((4, 2))))


def test_hard_sigmoid_values():
    out = ops.hard_sigmoid(Tensor(np.array([-10.0, -2.5, 0.0, 1.0, 2.5, 10.0]))).data
    np.testing.assert_allclose(out, [0.0, 0.0, 0.5, 0.7, 1.0, 1.0])


def test_signed_sqrt_values_and_capped_gradient_at_zero():
    x = Tensor(np.array([-16.0, -0.25, 0.0, 4.0]), requires_grad=True)
    y = ops.signed_sqrt(x)
    np.testing.assert_allclose(y.data, [-4.0, -0.5, 0.0, 2.0])
    ops.reduce_sum(y).backward()
    assert np.all(np.isfinite(x.grad))
    assert x.grad[2] == pytest.approx(1e3)
    np.testing.assert_allclose(x.grad[[0, 1, 3]], [0.125, 1.0, 0.25])


def test_dropout_is_inverted_and_identity_at_eval(rng):
    x = Tensor(np.ones((200, 50)))
    y = ops.dropout(x, 0.3, rng, train=True).data
    kept = y[y != 0.0]
    np.testing.assert_allclose(kept, 1 / 0.7)
    assert abs(y.mean() - 1.0) < 0.03
    assert ops.dropout(x, 0.3, rng, train=False) is x


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([1e-9]))[0] == pytest.approx(1e-3)
    assert relative_error(np.array([2.0]), np.array([1.0]))[0] == pytest.approx(0.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2 ** 31 - 1))
def test_sum_gradient_is_ones_property(n, m, seed):
    x = Tensor(np.random.default_rng(seed).normal(size=(n, m)), requires_grad=True)
    ops.reduce_sum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((n, m)))
