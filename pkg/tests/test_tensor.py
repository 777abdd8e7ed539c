import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from codecse import tensor as T
from codecse.tensor import Tape, Tensor, grad_check, no_grad


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def conv_reference(x, w, b, stride, padding):
    """Direct loop over the definition, used as the forward oracle."""
    c_out, c_in, k = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding)))
    t_out = (x.shape[1] + 2 * padding - k) // stride + 1
    out = np.zeros((c_out, t_out))
    for c in range(c_out):
        for t in range(t_out):
            out[c, t] = b[c] + np.sum(w[c] * xp[:, t * stride:t * stride + k])
    return out


# conv1d / conv_transpose1d

def test_conv1d_identity_kernel():
    y = T.conv1d(Tensor([[1.0, 2.0, 3.0]]), Tensor([[[1.0]]]), Tensor([0.0]))
    np.testing.assert_array_equal(y.data, [[1.0, 2.0, 3.0]])


def test_conv1d_output_shape():
    x = Tensor(np.zeros((4, 100)))
    w = Tensor(np.zeros((8, 4, 3)))
    assert T.conv1d(x, w, Tensor(np.zeros(8)), stride=2, padding=1).shape == (8, 50)


@pytest.mark.parametrize("stride,padding,k", [(1, 0, 3), (2, 1, 4), (3, 2, 5), (5, 3, 10)])
def test_conv1d_matches_direct_loop(rng, stride, padding, k):
    x = rng.normal(size=(3, 23))
    w = rng.normal(size=(2, 3, k))
    b = rng.normal(size=2)
    y = T.conv1d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
    np.testing.assert_allclose(y.data, conv_reference(x, w, b, stride, padding), atol=1e-12)


def test_conv1d_batched_equals_per_item(rng):
    x = rng.normal(size=(3, 2, 17))
    w = Tensor(rng.normal(size=(4, 2, 3)))
    y = T.conv1d(Tensor(x), w, stride=2, padding=1).data
    for i in range(3):
        np.testing.assert_allclose(y[i], T.conv1d(Tensor(x[i]), w, stride=2, padding=1).data, atol=1e-13)


def test_conv1d_gradients(rng):
    x, w, b = leaf(rng.normal(size=(3, 12))), leaf(rng.normal(size=(4, 3, 3))), leaf(rng.normal(size=4))
    proj = rng.normal(size=(4, 6))
    res = grad_check(lambda x, w, b: T.tsum(T.conv1d(x, w, b, stride=2, padding=1) * proj), [x, w, b])
    assert res.max_rel_error <= 1e-4


def test_conv1d_rejects_channel_mismatch():
    with pytest.raises(ValueError, match="C_in"):
        T.conv1d(Tensor(np.zeros((3, 10))), Tensor(np.zeros((2, 4, 3))))


def test_conv1d_rejects_too_short_input():
    with pytest.raises(ValueError, match="kernel|length|T"):
        T.conv1d(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 1, 5))))


def test_conv_transpose_output_length():
    y = T.conv_transpose1d(Tensor(np.zeros((2, 10))), Tensor(np.zeros((2, 3, 8))), stride=4, padding=2)
    assert y.shape == (3, 40)


def test_conv_transpose_zero_input_gives_bias():
    b = np.array([0.5, -1.0, 2.0])
    y = T.conv_transpose1d(Tensor(np.zeros((2, 6))), Tensor(np.ones((2, 3, 4))), Tensor(b), stride=2, padding=1)
    np.testing.assert_array_equal(y.data, np.repeat(b[:, None], y.shape[1], axis=1))


@given(seed=st.integers(0, 2**32 - 1), stride=st.integers(1, 5), k=st.integers(1, 8),
       padding=st.integers(0, 3), t=st.integers(8, 30))
def test_conv_adjoint_identity(seed, stride, k, padding, t):
    rng = np.random.default_rng(seed)
    padding = min(padding, k - 1)
    x = rng.normal(size=(3, t))
    w = rng.normal(size=(4, 3, k))
    y_shape = T.conv1d(Tensor(x), Tensor(w), stride=stride, padding=padding).shape
    y = rng.normal(size=y_shape)
    lhs = np.sum(T.conv1d(Tensor(x), Tensor(w), stride=stride, padding=padding).data * y)
    # conv^T takes [C_out, T_out] back to [C_in, T]; weight layout is [C_in_of_transpose, C_out, k]
    xt = T.conv_transpose1d(Tensor(y), Tensor(w), stride=stride, padding=padding,
                            output_padding=t - ((y_shape[1] - 1) * stride - 2 * padding + k)).data
    assert abs(lhs - np.sum(x * xt)) <= 1e-9 * max(1.0, abs(lhs))


def test_conv_transpose_input_gradient_is_conv(rng):
    """Backward of conv_transpose wrt its input is the forward conv with the same weight."""
    w = rng.normal(size=(3, 2, 4))
    x = leaf(rng.normal(size=(3, 9)))
    with Tape() as tape:
        y = T.conv_transpose1d(x, Tensor(w), stride=2, padding=1)
        g = rng.normal(size=y.shape)
        loss = T.tsum(y * g)
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, T.conv1d(Tensor(g), Tensor(w), stride=2, padding=1).data, atol=1e-12)


def test_conv_transpose_gradients(rng):
    x, w, b = leaf(rng.normal(size=(2, 7))), leaf(rng.normal(size=(2, 3, 5))), leaf(rng.normal(size=3))
    y_len = T.conv_transpose1d(x, w, b, stride=3, padding=1, output_padding=1).shape[1]
    proj = rng.normal(size=(3, y_len))
    res = grad_check(lambda x, w, b: T.tsum(T.conv_transpose1d(x, w, b, stride=3, padding=1,
                                                               output_padding=1) * proj), [x, w, b])
    assert res.max_rel_error <= 1e-4


# snake

def test_snake_at_zero_is_zero():
    for a in (0.1, 1.0, 7.0):
        assert T.snake(Tensor([[0.0]]), Tensor([a])).data[0, 0] == 0.0


def test_snake_known_value():
    y = T.snake(Tensor([[math.pi / 2]]), Tensor([1.0])).data[0, 0]
    assert y == pytest.approx(math.pi / 2 + 1.0, abs=1e-12)
    assert y == pytest.approx(2.570796, abs=1e-6)


def test_snake_derivative_at_zero_is_one():
    x = leaf([[0.0]])
    res = grad_check(lambda x: T.tsum(T.snake(x, Tensor([1.3]))), [x])
    assert res.passed
    x.grad = None
    with Tape() as tape:
        y = T.tsum(T.snake(x, Tensor([1.3])))
    tape.backward(y)
    assert x.grad[0, 0] == pytest.approx(1.0, abs=1e-15)


def test_snake_rejects_nonpositive_alpha():
    with pytest.raises(ValueError, match="alpha"):
        T.snake(Tensor(np.zeros((2, 3))), Tensor([1.0, 0.0]))
    with pytest.raises(ValueError, match="alpha"):
        T.snake(Tensor(np.zeros((2, 3))), Tensor([1.0, -2.0]))


def test_snake_is_non_decreasing():
    x = np.linspace(-20, 20, 20001)
    for a in (0.3, 1.0, 4.0):
        y = T.snake(Tensor(x[None]), Tensor([a])).data[0]
        assert np.all(np.diff(y) >= -1e-12)
        deriv = 1 + np.sin(2 * a * x)
        assert deriv.min() >= 0


def test_snake_gradients_including_alpha(rng):
    x = leaf(rng.normal(size=(2, 3, 6)))
    a = leaf(rng.uniform(0.5, 2.0, size=3))
    proj = rng.normal(size=(2, 3, 6))
    assert grad_check(lambda x, a: T.tsum(T.snake(x, a) * proj), [x, a]).max_rel_error <= 1e-4


# core ops

def test_sigmoid_at_zero():
    assert T.sigmoid(Tensor([0.0])).data[0] == 0.5


def test_sigmoid_extremes_are_finite():
    y = T.sigmoid(Tensor([-800.0, 800.0])).data
    assert np.all(np.isfinite(y)) and y[0] == 0.0 and y[1] == 1.0


def test_softmax_rows_sum_to_one(rng):
    y = T.softmax(Tensor(rng.normal(scale=30, size=(5, 7, 11))), axis=-1).data
    assert np.max(np.abs(y.sum(-1) - 1.0)) <= 1e-12


def test_layer_norm_statistics(rng):
    x = rng.normal(3.0, 5.0, size=(6, 32))
    y = T.layer_norm(Tensor(x), eps=0.0).data
    assert np.max(np.abs(y.mean(-1))) <= 1e-9
    assert np.max(np.abs(y.var(-1) - 1.0)) <= 1e-9


def test_abs_mean_hand_value():
    assert T.abs_mean(Tensor([1.0, -1.0, 3.0, -3.0])).data == 2.0


def test_sq_mean_hand_value():
    assert T.sq_mean(Tensor([1.0, -2.0, 2.0, 0.0])).data == pytest.approx(9 / 4)


def test_matmul_rejects_nonconforming():
    with pytest.raises(ValueError):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


def test_add_rejects_nonconforming():
    with pytest.raises(ValueError):
        T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))


UNARY = {
    "neg": T.neg, "square": T.square, "exp": T.exp, "tanh": T.tanh, "sigmoid": T.sigmoid,
    "gelu": T.gelu, "abs": T.tabs, "softmax": lambda a: T.softmax(a, -1),
    "layer_norm": lambda a: T.layer_norm(a), "transpose": lambda a: T.transpose(a),
    "reshape": lambda a: T.reshape(a, (-1,)), "mean": lambda a: T.mean(a, axis=0),
    "power3": lambda a: T.power(a, 3.0), "getitem": lambda a: a[1:, ::2],
    "pad_last": lambda a: T.pad_last(a, 2, -1), "frame": lambda a: T.frame(a, 3, 2),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@pytest.mark.parametrize("seed", range(3))
def test_unary_op_gradients(name, seed):
    rng = np.random.default_rng(seed)
    x = leaf(rng.normal(size=(4, 6)) + 0.05 * np.sign(rng.normal(size=(4, 6))))
    f = UNARY[name]
    proj = rng.normal(size=f(Tensor(x.data)).shape)
    assert grad_check(lambda x: T.tsum(f(x) * proj), [x]).max_rel_error <= 1e-4


def test_positive_domain_ops_gradients(rng):
    x = leaf(rng.uniform(0.5, 2.0, size=(3, 4)))
    proj = rng.normal(size=(3, 4))
    for f in (T.log, T.sqrt):
        assert grad_check(lambda x: T.tsum(f(x) * proj), [x]).max_rel_error <= 1e-4


BINARY = {
    "add": T.add, "sub": T.sub, "mul": T.mul, "div": T.div,
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_op_gradients_with_broadcast(name, rng):
    a = leaf(rng.normal(size=(3, 4)))
    b = leaf(rng.uniform(0.5, 1.5, size=(4,)))
    proj = rng.normal(size=(3, 4))
    f = BINARY[name]
    assert grad_check(lambda a, b: T.tsum(f(a, b) * proj), [a, b]).max_rel_error <= 1e-4


def test_matmul_batched_gradients(rng):
    a = leaf(rng.normal(size=(2, 3, 4)))
    b = leaf(rng.normal(size=(4, 5)))
    c = leaf(rng.normal(size=(2, 5, 3)))
    proj = rng.normal(size=(2, 3, 3))
    assert grad_check(lambda a, b, c: T.tsum(T.matmul(T.matmul(a, b), c) * proj), [a, b, c]).passed


def test_layer_norm_affine_gradients(rng):
    x, w, b = leaf(rng.normal(size=(3, 5))), leaf(rng.normal(size=5)), leaf(rng.normal(size=5))
    proj = rng.normal(size=(3, 5))
    assert grad_check(lambda x, w, b: T.tsum(T.layer_norm(x, w, b) * proj), [x, w, b]).passed


def test_concat_and_take_rows_gradients(rng):
    a, b = leaf(rng.normal(size=(2, 3))), leaf(rng.normal(size=(4, 3)))
    idx = np.array([[0, 5], [3, 3]])
    proj = rng.normal(size=(2, 2, 3))
    assert grad_check(lambda a, b: T.tsum(T.take_rows(T.concat([a, b]), idx) * proj), [a, b]).passed


# backward semantics

def test_mean_gradient_is_one_over_n():
    x = leaf(np.arange(5.0))
    with Tape() as tape:
        loss = T.mean(x)
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, np.full(5, 0.2))


def test_fan_out_accumulates():
    x = leaf([1.5, -2.0])
    with Tape() as tape:
        loss = T.tsum(x + x)
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])


def test_gradients_accumulate_across_backward_calls():
    x = leaf([1.0, 2.0])
    for _ in range(2):
        with Tape() as tape:
            loss = T.tsum(x * 3.0)
        tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [6.0, 6.0])


def test_backward_rejects_non_scalar():
    x = leaf([1.0, 2.0])
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ValueError, match="scalar"):
        tape.backward(y)


def test_backward_rejects_untaped_loss():
    x = leaf([1.0, 2.0])
    loss = T.tsum(x * 2.0)
    with pytest.raises(ValueError, match="tape"):
        Tape().backward(loss)


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with Tape() as tape, no_grad():
        T.exp(x)
    assert len(tape) == 0


def test_tape_order_is_topological():
    x = leaf([1.0, 2.0])
    with Tape() as tape:
        a = x * 2.0
        b = T.exp(a)
        T.tsum(a + b)
    produced = {}
    for i, node in enumerate(tape.nodes):
        for p in node.parents:
            if id(p) in produced:
                assert produced[id(p)] < i
        produced[id(node.out)] = i


def test_forward_backward_bit_deterministic(rng):
    data = rng.normal(size=(2, 3, 16))
    w = rng.normal(size=(4, 3, 5))
    grads = []
    for _ in range(2):
        x, wt = leaf(data), leaf(w)
        with Tape() as tape:
            loss = T.sq_mean(T.snake(T.conv1d(x, wt, padding=2), Tensor(np.ones(4))))
        tape.backward(loss)
        grads.append((loss.data.copy(), x.grad.copy(), wt.grad.copy()))
    for a, b in zip(*grads):
        assert np.array_equal(a, b)


def test_finite_outputs_on_finite_inputs(rng):
    x = Tensor(rng.normal(scale=50, size=(3, 40)))
    for f in (T.tanh, T.sigmoid, T.gelu, lambda a: T.softmax(a, -1), lambda a: T.layer_norm(a)):
        assert np.all(np.isfinite(f(x).data))


def test_straight_through_forward_and_backward():
    x = leaf([0.2, -0.7])
    q = np.array([0.0, -1.0])
    with Tape() as tape:
        y = T.straight_through(x, q)
        loss = T.tsum(y * Tensor([3.0, 5.0]))
    np.testing.assert_array_equal(y.data, q)
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [3.0, 5.0])


# grad_check itself

def test_grad_check_linear_function_is_exact(rng):
    x = leaf(rng.normal(size=7))
    c = rng.normal(size=7)
    assert grad_check(lambda x: T.tsum(x * c), [x]).max_rel_error <= 1e-10


def test_grad_check_snake_chain(rng):
    x = leaf(rng.normal(size=(2, 5)))
    a1, a2 = Tensor([0.7, 1.9]), Tensor([1.1, 0.4])
    assert grad_check(lambda x: T.tsum(T.snake(T.snake(x, a1), a2)), [x]).max_rel_error <= 1e-4


def test_grad_check_flags_corrupted_gradient(rng):
    def bad_triple(x):
        # forward is 3x but backward claims 6x
        return T._make(x.data * 3.0, (x,), "bad", lambda g: (g * 6.0,))

    x = leaf(rng.normal(size=4))
    res = grad_check(lambda x: T.tsum(bad_triple(x)), [x])
    assert res.max_rel_error == pytest.approx(0.5, abs=1e-6)
    assert not res.passed


@pytest.mark.parametrize("eps", [1e-8, 1e-2])
def test_grad_check_rejects_eps_outside_range(eps):
    with pytest.raises(ValueError, match="eps"):
        grad_check(lambda x: T.tsum(x), [leaf([1.0])], eps=eps)
