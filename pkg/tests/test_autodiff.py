"""Gradient and forward-pass checks for the tensor engine.

Every kernel op is verified against the central finite-difference oracle
in float64; forward values are checked against closed forms.
"""

import numpy as np
import pytest

from aeskd import autodiff as ad
from aeskd.autodiff import Tensor, check_gradients, finite_difference_gradient


def randt(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


class TestForward:
    def test_relu_definition(self):
        out = ad.relu(Tensor(np.array([-1.0, 0.0, 2.0])))
        assert np.array_equal(out.data, [0.0, 0.0, 2.0])

    def test_matmul_identity(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.standard_normal((3, 3)))
        out = ad.matmul(a, Tensor(np.eye(3)))
        np.testing.assert_allclose(out.data, a.data)

    def test_matmul_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="matmul"):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_softmax_symmetry(self):
        out = ad.softmax(Tensor(np.zeros(4)))
        np.testing.assert_allclose(out.data, [0.25, 0.25, 0.25, 0.25])

    def test_softmax_rows_normalized(self):
        rng = np.random.default_rng(1)
        out = ad.softmax(Tensor(rng.standard_normal((8, 10)) * 5))
        assert (out.data >= 0).all()
        np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(8), atol=1e-9)

    def test_cumsum(self):
        out = ad.cumsum(Tensor(np.array([1.0, 2.0, 3.0])))
        np.testing.assert_allclose(out.data, [1.0, 3.0, 6.0])

    def test_concat_roundtrip_slices(self):
        rng = np.random.default_rng(2)
        a, b = rng.standard_normal((2, 3)), rng.standard_normal((2, 5))
        out = ad.concat([Tensor(a), Tensor(b)], axis=1)
        np.testing.assert_array_equal(out.data[:, :3], a)
        np.testing.assert_array_equal(out.data[:, 3:], b)

    def test_conv2d_stride_shapes(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((2, 3, 8, 8)))
        w = Tensor(rng.standard_normal((4, 3, 3, 3)))
        assert ad.conv2d(x, w, stride=1).shape == (2, 4, 8, 8)
        assert ad.conv2d(x, w, stride=2).shape == (2, 4, 4, 4)

    def test_conv2d_channel_mismatch_rejected(self):
        x = Tensor(np.zeros((1, 2, 4, 4)))
        w = Tensor(np.zeros((4, 3, 3, 3)))
        with pytest.raises(ValueError, match="channel"):
            ad.conv2d(x, w)

    def test_gap_constant(self):
        x = Tensor(np.full((2, 3, 4, 4), 7.0))
        np.testing.assert_allclose(ad.global_avg_pool(x).data, np.full((2, 3), 7.0))


class TestBackwardBasics:
    def test_square_derivative(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        y = ad.square(x)
        y.backward()
        assert x.grad == pytest.approx(6.0)

    def test_dead_relu_gradient_is_zero(self):
        x = Tensor(np.array([-1.0, -2.0, -0.5]), requires_grad=True)
        loss = ad.mean(ad.relu(x))
        loss.backward()
        np.testing.assert_array_equal(x.grad, np.zeros(3))

    def test_backward_on_non_scalar_rejected(self):
        x = Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            (x * 2.0).backward()

    def test_grad_accumulates_over_fanout(self):
        x = Tensor(np.array(2.0), requires_grad=True)
        y = x * x + x * 3.0
        y.backward()
        assert x.grad == pytest.approx(2 * 2.0 + 3.0)

    def test_no_grad_builds_no_graph(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        with ad.no_grad():
            y = ad.relu(x * 2.0)
        assert y._parents == ()


class TestFiniteDifferenceOracle:
    def test_quadratic(self):
        x = Tensor(np.array(2.0, dtype=np.float64), requires_grad=True)
        (g,) = finite_difference_gradient(lambda: ad.square(x), [x], eps=1e-4)
        assert g == pytest.approx(4.0, abs=1e-6)

    def test_linear_exact_for_any_eps(self):
        x = Tensor(np.array([1.0, -2.0], dtype=np.float64), requires_grad=True)
        for eps in (1e-2, 1e-4, 1e-6):
            (g,) = finite_difference_gradient(lambda: ad.tsum(x * 3.0), [x], eps=eps)
            np.testing.assert_allclose(g, [3.0, 3.0], atol=1e-6)

    def test_negative_eps_rejected(self):
        x = Tensor(np.array(1.0), requires_grad=True)
        with pytest.raises(ValueError, match="eps"):
            finite_difference_gradient(lambda: x * x, [x], eps=0.0)


KERNEL_CASES = [
    ("add", lambda rng: _binary(rng, lambda a, b: a + b)),
    ("mul", lambda rng: _binary(rng, lambda a, b: a * b)),
    ("div", lambda rng: _binary(rng, lambda a, b: a / (b + 3.0))),
    ("matmul", lambda rng: _matmul(rng)),
    ("conv_s1", lambda rng: _conv(rng, stride=1)),
    ("conv_s2", lambda rng: _conv(rng, stride=2)),
    ("relu", lambda rng: _unary(rng, ad.relu)),
    ("gap", lambda rng: _gap(rng)),
    ("softmax", lambda rng: _unary(rng, lambda x: ad.softmax(x, axis=-1))),
    ("concat", lambda rng: _concat(rng)),
    ("cumsum", lambda rng: _unary(rng, ad.cumsum)),
    ("mean", lambda rng: _unary(rng, lambda x: x)),
    ("sqrt", lambda rng: _unary(rng, ad.sqrt, positive=True)),
    ("square", lambda rng: _unary(rng, ad.square)),
    ("abs", lambda rng: _unary(rng, ad.absval)),
    ("sigmoid", lambda rng: _unary(rng, ad.sigmoid)),
    ("log", lambda rng: _unary(rng, ad.log, positive=True)),
    ("exp", lambda rng: _unary(rng, ad.exp)),
]


def _unary(rng, op, positive=False):
    data = rng.standard_normal((3, 5))
    if positive:
        data = np.abs(data) + 0.5
    x = Tensor(data, requires_grad=True)
    return lambda: ad.mean(op(x)), [x]


def _binary(rng, op):
    a = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    b = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    return lambda: ad.mean(op(a, b)), [a, b]


def _matmul(rng):
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    return lambda: ad.mean(ad.matmul(a, b)), [a, b]


def _conv(rng, stride):
    x = Tensor(rng.standard_normal((2, 2, 5, 5)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.5, requires_grad=True)
    b = Tensor(rng.standard_normal(3) * 0.1, requires_grad=True)
    return lambda: ad.mean(ad.conv2d(x, w, b, stride=stride)), [x, w, b]


def _gap(rng):
    x = Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True)
    return lambda: ad.mean(ad.global_avg_pool(x)), [x]


def _concat(rng):
    a = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal((2, 4)), requires_grad=True)
    return lambda: ad.mean(ad.square(ad.concat([a, b], axis=1))), [a, b]


class TestKernelGradients:
    @pytest.mark.parametrize("name,builder", KERNEL_CASES, ids=[c[0] for c in KERNEL_CASES])
    def test_against_finite_differences(self, name, builder):
        for seed in range(3):
            rng = np.random.default_rng(1000 + seed)
            loss_fn, params = builder(rng)
            err = check_gradients(loss_fn, params, eps=1e-5, rtol=1e-4)
            assert err < 1e-4, f"{name} gradient mismatch: {err}"

    def test_two_layer_network_many_seeds(self):
        worst = 0.0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            x = Tensor(rng.standard_normal((4, 6)))
            w1 = Tensor(rng.standard_normal((6, 5)) * 0.5, requires_grad=True)
            b1 = Tensor(rng.standard_normal(5) * 0.1, requires_grad=True)
            w2 = Tensor(rng.standard_normal((5, 3)) * 0.5, requires_grad=True)
            b2 = Tensor(rng.standard_normal(3) * 0.1, requires_grad=True)

            def loss_fn():
                h = ad.relu(ad.matmul(x, w1) + b1)
                return ad.mean(ad.square(ad.matmul(h, w2) + b2))

            worst = max(worst, check_gradients(loss_fn, [w1, b1, w2, b2], eps=1e-5))
        assert worst < 1e-4
