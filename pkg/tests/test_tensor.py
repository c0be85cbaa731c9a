"""Operation contracts and gradient correctness of the autodiff engine."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mossl import tensor as T
from mossl.errors import ConfigError, DomainError, ShapeError
from oracles import conv_loop, fd_gradient


def rng(seed=0):
    return np.random.default_rng(seed)


def rel_err(a, n):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float(np.max(np.abs(a - n) / denom))


class TestMatmul:
    def test_identity(self):
        b = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = T.Tensor(np.eye(2)) @ T.Tensor(b)
        assert np.array_equal(out.data, b)

    def test_hand_contraction(self):
        out = T.Tensor([[1.0, 2.0]]) @ T.Tensor([[3.0], [4.0]])
        assert out.data.tolist() == [[11.0]]

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError) as exc:
            T.Tensor(np.zeros((2, 3))) @ T.Tensor(np.zeros((2, 3)))
        assert "(2, 3)" in str(exc.value)

    def test_grad_of_sum_closed_form(self):
        a = T.Tensor(rng(1).standard_normal((3, 4)), requires_grad=True)
        b = T.Tensor(rng(2).standard_normal((4, 2)), requires_grad=True)
        loss = (a @ b).sum()
        grads = T.gradients(loss, {"a": a, "b": b})
        assert np.allclose(grads["a"], np.ones((3, 2)) @ b.data.T, atol=1e-12)
        assert np.allclose(grads["b"], a.data.T @ np.ones((3, 2)), atol=1e-12)

    def test_grad_matches_finite_differences(self):
        a_data = rng(3).standard_normal((2, 3, 4))
        b_data = rng(4).standard_normal((4, 2))
        weight = rng(5).standard_normal((2, 3, 2))

        a = T.Tensor(a_data, requires_grad=True)
        b = T.Tensor(b_data, requires_grad=True)
        loss = ((a @ b) * T.Tensor(weight)).sum()
        grads = T.gradients(loss, {"a": a, "b": b})

        def scalar():
            return float(np.sum((a_data @ b_data) * weight))

        assert rel_err(grads["a"], fd_gradient(scalar, a_data)) < 1e-6
        assert rel_err(grads["b"], fd_gradient(scalar, b_data)) < 1e-6


class TestSoftmax:
    def test_symmetry(self):
        out = T.softmax(T.Tensor([0.0, 0.0, 0.0]), axis=0)
        assert np.allclose(out.data, [1 / 3] * 3, atol=1e-15)

    def test_direct_formula(self):
        out = T.softmax(T.Tensor([math.log(2.0), 0.0]), axis=0)
        assert np.allclose(out.data, [2 / 3, 1 / 3], atol=1e-12)

    def test_no_overflow_on_extreme_input(self):
        out = T.softmax(T.Tensor([1000.0, 0.0]), axis=0)
        assert np.all(np.isfinite(out.data))
        assert out.data[0] == pytest.approx(1.0)
        assert out.data[1] == pytest.approx(0.0, abs=1e-300)

    @given(
        st.lists(
            st.floats(min_value=-700, max_value=700, allow_nan=False),
            min_size=1,
            max_size=8,
        )
    )
    @settings(max_examples=200, deadline=None)
    def test_rows_sum_to_one(self, values):
        out = T.softmax(T.Tensor(values), axis=0)
        assert abs(float(out.data.sum()) - 1.0) < 1e-12
        # entries can underflow to an exact 0.0 when gaps exceed ~745 in
        # log space; they never exceed 1 or go negative
        assert np.all(out.data >= 0.0) and np.all(out.data <= 1.0)


class TestElementwise:
    def test_relu_values(self):
        out = T.relu(T.Tensor([-3.0, 0.0, 3.0]))
        assert out.data.tolist() == [0.0, 0.0, 3.0]

    def test_sigmoid_symmetry(self):
        assert float(T.sigmoid(T.Tensor(0.0)).data) == 0.5

    def test_sigmoid_extreme_inputs_finite(self):
        out = T.sigmoid(T.Tensor([-800.0, 800.0]))
        assert np.all(np.isfinite(out.data))

    def test_concat_shape_arithmetic(self):
        out = T.concat([T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((2, 5)))], axis=1)
        assert out.shape == (2, 8)

    def test_log_domain_error(self):
        with pytest.raises(DomainError):
            T.log(T.Tensor([1.0, -2.0]))

    def test_log_sigmoid_matches_log_of_sigmoid(self):
        x = rng(6).standard_normal(50) * 3
        out = T.log_sigmoid(T.Tensor(x))
        assert np.allclose(out.data, np.log(1.0 / (1.0 + np.exp(-x))), atol=1e-12)

    def test_log_sigmoid_no_underflow(self):
        out = T.log_sigmoid(T.Tensor([-750.0]))
        assert out.data[0] == pytest.approx(-750.0)


class TestDilatedCausalConv:
    def test_kernel_one_identity(self):
        x = rng(7).standard_normal((5, 3))
        out = T.dilated_causal_conv(T.Tensor(x), T.Tensor(np.eye(3)[None]), dilation=1)
        assert np.allclose(out.data, x, atol=1e-15)

    def test_selector_kernel_shifts(self):
        # taps (0, 1) per channel pick the newer step: output equals input
        # with the first step dropped
        x = rng(8).standard_normal((6, 2))
        kernel = np.stack([np.zeros((2, 2)), np.eye(2)])
        out = T.dilated_causal_conv(T.Tensor(x), T.Tensor(kernel), dilation=1)
        assert np.allclose(out.data, x[1:], atol=1e-15)

    def test_matches_loop_oracle(self):
        x = rng(9).standard_normal((2, 7, 3))
        kernel = rng(10).standard_normal((2, 3, 4))
        out = T.dilated_causal_conv(T.Tensor(x), T.Tensor(kernel), dilation=2)
        assert np.allclose(out.data, conv_loop(x, kernel, 2), atol=1e-12)

    def test_causality(self):
        x = rng(11).standard_normal((8, 2))
        kernel = rng(12).standard_normal((2, 2, 2))
        base = T.dilated_causal_conv(T.Tensor(x), T.Tensor(kernel), dilation=2).data
        bumped = x.copy()
        bumped[-1] += 10.0
        out = T.dilated_causal_conv(T.Tensor(bumped), T.Tensor(kernel), dilation=2).data
        # only the final output step has the last input in its window
        assert np.array_equal(out[:-1], base[:-1])
        assert not np.allclose(out[-1], base[-1])

    def test_time_exhaustion_is_config_error(self):
        with pytest.raises(ConfigError):
            T.dilated_causal_conv(
                T.Tensor(np.zeros((3, 1))), T.Tensor(np.zeros((2, 1, 1))), dilation=4
            )


def _offset(a):
    # keep relu/clip inputs away from their kinks
    return a + 0.1 * np.sign(a) + 0.05


_OP_CASES = {
    "add": lambda x: (x + T.Tensor(rng(20).standard_normal(x.shape))),
    "add_broadcast": lambda x: (x + T.Tensor(rng(21).standard_normal(x.shape[-1]))),
    "sub": lambda x: (T.Tensor(rng(22).standard_normal(x.shape)) - x),
    "mul": lambda x: (x * T.Tensor(rng(23).standard_normal(x.shape))),
    "div": lambda x: (x / T.Tensor(2.0 + np.abs(rng(24).standard_normal(x.shape)))),
    "neg": lambda x: (-x),
    "relu": lambda x: T.relu(x),
    "tanh": lambda x: T.tanh(x),
    "sigmoid": lambda x: T.sigmoid(x),
    "exp": lambda x: T.exp(x),
    "log": lambda x: T.log(x * x + 1.0),
    "log_sigmoid": lambda x: T.log_sigmoid(x),
    "softmax": lambda x: T.softmax(x, axis=-1),
    "logsumexp": lambda x: T.logsumexp(x, axis=-1),
    "sum_axis": lambda x: x.sum(axis=0, keepdims=True),
    "mean_axes": lambda x: x.mean(axis=(0, 1)),
    "reshape": lambda x: x.reshape(-1 if x.size % 2 else (x.size // 2, 2)),
    "transpose": lambda x: x.transpose((2, 0, 1)),
    "slice": lambda x: x[:, 1:, :2],
    "clip": lambda x: T.clip(x, -0.8, 0.8),
    "broadcast": lambda x: T.broadcast_to(x.mean(axis=0, keepdims=True), x.shape),
    "concat": lambda x: T.concat([x, x * T.Tensor(2.0)], axis=1),
    "linear": lambda x: T.linear(
        x,
        T.Tensor(rng(25).standard_normal((x.shape[-1], 2))),
        T.Tensor(rng(26).standard_normal(2)),
        relu=True,
    ),
    "matmul_batched": lambda x: x @ T.Tensor(rng(27).standard_normal((x.shape[-1], 3))),
    "conv": lambda x: T.dilated_causal_conv(
        x, T.Tensor(rng(28).standard_normal((2, x.shape[-1], 2))), dilation=1
    ),
}


@pytest.mark.parametrize("name", sorted(_OP_CASES))
def test_every_op_gradient_matches_central_differences(name):
    data = _offset(rng(30).standard_normal((2, 3, 3)))
    x = T.Tensor(data, requires_grad=True)
    build = _OP_CASES[name]
    probe = T.Tensor(rng(31).standard_normal(build(T.Tensor(data)).shape))

    def loss_tensor():
        return (build(x) * probe).sum()

    analytic = T.gradients(loss_tensor(), {"x": x})["x"]

    def scalar():
        return float((build(T.Tensor(data)) * probe).sum().data)

    numeric = fd_gradient(scalar, data)
    assert rel_err(analytic, numeric) < 1e-6, f"{name} gradient mismatch"


def test_gradient_linearity():
    x = T.Tensor(rng(40).standard_normal((3, 3)), requires_grad=True)
    w = T.Tensor(rng(41).standard_normal((3, 3)))

    def loss_one():
        return (T.tanh(x @ w)).sum()

    def loss_two():
        return (T.sigmoid(x) * x).sum()

    g1 = T.gradients(loss_one(), {"x": x})["x"]
    g2 = T.gradients(loss_two(), {"x": x})["x"]
    a, b = 0.7, -1.3
    combined = T.gradients(loss_one() * T.Tensor(a) + loss_two() * T.Tensor(b), {"x": x})["x"]
    assert np.max(np.abs(combined - (a * g1 + b * g2))) < 1e-10


def test_unreached_parameter_gets_exact_zero():
    x = T.Tensor([1.0, 2.0], requires_grad=True)
    unused = T.Tensor([3.0], requires_grad=True)
    grads = T.gradients((x * x).sum(), {"x": x, "unused": unused})
    assert np.array_equal(grads["unused"], np.zeros(1))
    assert np.allclose(grads["x"], [2.0, 4.0], atol=1e-12)


def test_stop_gradient_blocks_flow():
    x = T.Tensor([2.0], requires_grad=True)
    loss = (T.stop_gradient(x * x) * x).sum()
    grads = T.gradients(loss, {"x": x})
    assert np.allclose(grads["x"], [4.0])  # d(4*x)/dx, the squared path is frozen


def test_backward_requires_scalar():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        T.backward(x * x)


def test_repeated_gradients_do_not_accumulate():
    x = T.Tensor([3.0], requires_grad=True)
    first = T.gradients((x * x).sum(), {"x": x})["x"]
    second = T.gradients((x * x).sum(), {"x": x})["x"]
    assert np.array_equal(first, second)


def test_logsumexp_matches_naive():
    x = rng(50).standard_normal((4, 5))
    out = T.logsumexp(T.Tensor(x), axis=-1)
    naive = np.log(np.sum(np.exp(x), axis=-1))
    assert np.allclose(out.data, naive, atol=1e-12)
    assert out.shape == (4,)


def test_shared_node_gradient_counts_both_paths():
    x = T.Tensor([1.5], requires_grad=True)
    y = x * x  # used twice below
    loss = (y + y).sum()
    grads = T.gradients(loss, {"x": x})
    assert np.allclose(grads["x"], [6.0], atol=1e-12)
