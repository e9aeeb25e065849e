"""Autodiff engine tests.

Analytic gradients are validated against central finite differences; the
oracle mutates the underlying parameter array in place and re-runs the
forward closure, so it shares no code with the backward rules it checks.
"""

import numpy as np
import pytest

from molcalib import autodiff as ad
from molcalib.errors import NumericalError, ShapeError, TapeError


def numeric_gradient(f, x, eps=1e-6):
    """Central-difference gradient of scalar f() with respect to array x."""
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        keep = flat[i]
        step = eps * max(1.0, abs(keep))
        flat[i] = keep + step
        fp = f()
        flat[i] = keep - step
        fm = f()
        flat[i] = keep
        gf[i] = (fp - fm) / (2.0 * step)
    return g


def check_grads(build, params, rtol=1e-4, atol=1e-7):
    """build() -> scalar Tensor; params: list of leaf Tensors to check."""
    loss = build()
    ad.backward(loss)
    for p in params:
        fd = numeric_gradient(lambda: build().item(), p.data)
        np.testing.assert_allclose(p.grad, fd, rtol=rtol, atol=atol)
        p.zero_grad()


class TestForwardSemantics:
    def test_matmul_shapes(self):
        a = ad.Tensor(np.arange(6.0).reshape(2, 3))
        b = ad.Tensor(np.arange(12.0).reshape(3, 4))
        assert ad.matmul(a, b).shape == (2, 4)
        v = ad.Tensor(np.ones(3))
        assert ad.matmul(v, b).shape == (4,)
        assert ad.matmul(a, v).shape == (2,)
        w = ad.Tensor(np.array([1.0, 2.0, 3.0]))
        assert ad.matmul(v, w).item() == 6.0

    def test_transpose(self):
        a = ad.Tensor([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        np.testing.assert_array_equal(ad.transpose(a).data, a.data.T)

    def test_sum_axes(self):
        a = ad.Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert a.sum().item() == 10.0
        np.testing.assert_array_equal(a.sum(axis=0).data, [4.0, 6.0])
        np.testing.assert_array_equal(a.sum(axis=1).data, [3.0, 7.0])

    def test_concat_1d(self):
        out = ad.concat([ad.Tensor([1.0]), ad.Tensor([2.0, 3.0])])
        np.testing.assert_array_equal(out.data, [1.0, 2.0, 3.0])

    def test_concat_2d_cols(self):
        a = ad.Tensor(np.ones((2, 2)))
        b = ad.Tensor(np.zeros((2, 3)))
        assert ad.concat([a, b], axis=1).shape == (2, 5)

    def test_slice_rows(self):
        a = ad.Tensor(np.arange(12.0).reshape(4, 3))
        np.testing.assert_array_equal(
            ad.slice_rows(a, 1, 3).data, a.data[1:3]
        )

    def test_broadcast_add_row_bias(self):
        h = ad.Tensor(np.zeros((3, 4)))
        bias = ad.Tensor(np.arange(4.0))
        out = h + bias
        np.testing.assert_array_equal(out.data, np.tile(np.arange(4.0), (3, 1)))

    def test_softmax_rows_sum_to_one(self):
        x = ad.Tensor(np.random.default_rng(0).standard_normal((5, 9)))
        s = ad.softmax(x, axis=1)
        np.testing.assert_allclose(s.data.sum(axis=1), 1.0, atol=1e-12)

    def test_softmax_1d_and_axis0(self):
        v = ad.softmax(ad.Tensor([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(v.data.sum(), 1.0, atol=1e-13)
        x = ad.Tensor(np.random.default_rng(1).standard_normal((4, 3)))
        s = ad.softmax(x, axis=0)
        np.testing.assert_allclose(s.data.sum(axis=0), 1.0, atol=1e-12)

    def test_clamp(self):
        a = ad.Tensor([-1.0, 0.5, 2.0])
        np.testing.assert_array_equal(
            ad.clamp(a, 0.0, 1.0).data, [0.0, 0.5, 1.0]
        )

    def test_pow_zero_exponent_is_exactly_one(self):
        a = ad.Tensor([0.3, 0.9], requires_grad=True)
        out = a ** 0.0
        np.testing.assert_array_equal(out.data, [1.0, 1.0])

    def test_scalar_mul(self):
        a = ad.Tensor([1.0, 2.0])
        np.testing.assert_array_equal((2.5 * a).data, [2.5, 5.0])
        np.testing.assert_array_equal((-a).data, [-1.0, -2.0])


class TestErrors:
    def test_3d_rejected(self):
        with pytest.raises(ShapeError):
            ad.Tensor(np.zeros((2, 2, 2)))

    def test_matmul_mismatch(self):
        with pytest.raises(ShapeError):
            ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((4, 2))))

    def test_add_mismatch(self):
        with pytest.raises(ShapeError):
            ad.Tensor(np.ones((2, 3))) + ad.Tensor(np.ones((3, 2)))

    def test_transpose_1d(self):
        with pytest.raises(ShapeError):
            ad.transpose(ad.Tensor([1.0]))

    def test_slice_bounds(self):
        with pytest.raises(ShapeError):
            ad.slice_rows(ad.Tensor(np.ones((3, 2))), 2, 5)

    def test_log_nonpositive(self):
        with pytest.raises(NumericalError):
            ad.log(ad.Tensor([1.0, 0.0]))
        with pytest.raises(NumericalError):
            ad.log(ad.Tensor([-1.0]))

    def test_overflow_caught(self):
        big = ad.Tensor(np.full((2, 2), 1e308))
        with pytest.raises(NumericalError):
            ad.matmul(big, big)

    def test_dropout_bad_rate(self):
        with pytest.raises(ValueError):
            ad.dropout(ad.Tensor([1.0]), 1.0, True, np.random.default_rng(0))


class TestTapeSemantics:
    def test_backward_needs_scalar(self):
        a = ad.Tensor(np.ones(3), requires_grad=True)
        out = a * 2.0
        with pytest.raises(TapeError):
            ad.backward(out)

    def test_backward_needs_recorded_value(self):
        with pytest.raises(TapeError):
            ad.backward(ad.Tensor(1.0, requires_grad=True))

    def test_leaf_accumulation_doubles(self):
        a = ad.Tensor([1.0, 2.0], requires_grad=True)
        loss = (a * a).sum()
        ad.backward(loss)
        first = a.grad.copy()
        ad.backward(loss)
        np.testing.assert_array_equal(a.grad, 2.0 * first)
        a.zero_grad()
        assert a.grad is None

    def test_diamond_reuse(self):
        # f = sum(x*x) + sum(x): d/dx = 2x + 1, x feeding two branches
        x = ad.Tensor([1.0, -2.0, 3.0], requires_grad=True)
        loss = (x * x).sum() + x.sum()
        ad.backward(loss)
        np.testing.assert_allclose(x.grad, 2.0 * x.data + 1.0)

    def test_constant_subgraph_not_tracked(self):
        a = ad.Tensor([1.0, 2.0])
        out = (a * 3.0).sum()
        assert not out.requires_grad
        assert out._parents == ()

    def test_mixed_batch_graph(self):
        # two forward passes joined into one loss reach the shared leaf once
        w = ad.Tensor([[1.0], [2.0]], requires_grad=True)
        x1 = ad.Tensor(np.array([[1.0, 0.0]]))
        x2 = ad.Tensor(np.array([[0.0, 1.0]]))
        loss = ad.matmul(x1, w).sum() + ad.matmul(x2, w).sum()
        ad.backward(loss)
        np.testing.assert_array_equal(w.grad, [[1.0], [1.0]])


class TestGradientOracle:
    def test_elementwise_chain(self):
        rng = np.random.default_rng(5)
        for seed in range(3):
            x = ad.Tensor(rng.standard_normal((4, 3)), requires_grad=True)

            def build():
                return (ad.tanh(x) * ad.sigmoid(x) + x * 0.5).sum()

            check_grads(build, [x])

    def test_matmul_all_shapes(self):
        rng = np.random.default_rng(6)
        a = ad.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = ad.Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        check_grads(lambda: ad.matmul(a, b).sum(), [a, b])
        v = ad.Tensor(rng.standard_normal(3), requires_grad=True)
        check_grads(lambda: ad.matmul(v, a).sum(), [v, a])
        w = ad.Tensor(rng.standard_normal(4), requires_grad=True)
        check_grads(lambda: ad.matmul(a, w).sum(), [a, w])
        u = ad.Tensor(rng.standard_normal(4), requires_grad=True)
        check_grads(lambda: ad.matmul(w, u), [w, u])

    def test_softmax_gradient(self):
        rng = np.random.default_rng(7)
        x = ad.Tensor(rng.standard_normal((3, 5)), requires_grad=True)
        t = rng.standard_normal((3, 5))
        check_grads(lambda: (ad.softmax(x, axis=1) * ad.Tensor(t)).sum(), [x])

    def test_log_clamp_pow_gradient(self):
        rng = np.random.default_rng(8)
        x = ad.Tensor(rng.random(6) * 0.8 + 0.1, requires_grad=True)

        def build():
            c = ad.clamp(x, 1e-12, 1.0 - 1e-12)
            return (ad.log(c) * (c ** 1.7)).sum()

        check_grads(build, [x])

    def test_clamp_blocks_gradient_outside(self):
        x = ad.Tensor([-0.5, 0.5, 1.5], requires_grad=True)
        ad.backward(ad.clamp(x, 0.0, 1.0).sum())
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])

    def test_concat_slice_transpose_gradient(self):
        rng = np.random.default_rng(9)
        a = ad.Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        b = ad.Tensor(rng.standard_normal((4, 2)), requires_grad=True)

        def build():
            joined = ad.concat([a, b], axis=1)
            return (ad.transpose(ad.slice_rows(joined, 1, 3)) ** 2.0).sum()

        check_grads(build, [a, b])

    def test_broadcast_bias_gradient(self):
        rng = np.random.default_rng(10)
        h = ad.Tensor(rng.standard_normal((5, 3)), requires_grad=True)
        bias = ad.Tensor(rng.standard_normal(3), requires_grad=True)
        check_grads(lambda: (ad.relu(h + bias)).sum(), [h, bias])

    def test_small_mlp_end_to_end(self):
        rng = np.random.default_rng(12)
        x = ad.Tensor(rng.standard_normal((6, 4)))
        w1 = ad.Tensor(rng.standard_normal((4, 5)) * 0.5, requires_grad=True)
        b1 = ad.Tensor(np.zeros(5), requires_grad=True)
        w2 = ad.Tensor(rng.standard_normal((5, 1)) * 0.5, requires_grad=True)

        def build():
            hidden = ad.relu(ad.matmul(x, w1) + b1)
            return ad.sigmoid(ad.matmul(hidden, w2)).sum()

        check_grads(build, [w1, b1, w2])

    def test_dropout_gradient_with_fixed_mask(self):
        x = ad.Tensor(np.linspace(-1, 1, 12).reshape(3, 4), requires_grad=True)

        def build():
            rng = np.random.default_rng(99)  # same mask every call
            return (ad.dropout(x, 0.5, True, rng) ** 2.0).sum()

        check_grads(build, [x])


class TestDropout:
    def test_rate_zero_is_same_tensor(self):
        x = ad.Tensor(np.ones(5), requires_grad=True)
        rng = np.random.default_rng(0)
        assert ad.dropout(x, 0.0, True, rng) is x
        assert ad.dropout(x, 0.3, False) is x

    def test_inverted_scaling_preserves_mean(self):
        rng = np.random.default_rng(42)
        x = ad.Tensor(np.ones(100_000))
        out = ad.dropout(x, 0.5, True, rng)
        assert abs(out.data.mean() - 1.0) < 0.02
        assert set(np.unique(out.data)) == {0.0, 2.0}

    def test_mask_reproducible_from_seed(self):
        x = ad.Tensor(np.ones((8, 8)))
        a = ad.dropout(x, 0.4, True, np.random.default_rng(7)).data
        b = ad.dropout(x, 0.4, True, np.random.default_rng(7)).data
        np.testing.assert_array_equal(a, b)


class TestStackScalars:
    def test_forward_and_gradient_scatter(self):
        xs = [ad.Tensor(np.asarray(float(i)), requires_grad=True)
              for i in range(4)]
        v = ad.stack_scalars(xs)
        np.testing.assert_array_equal(v.data, [0.0, 1.0, 2.0, 3.0])
        weights = ad.Tensor(np.array([1.0, 10.0, 100.0, 1000.0]))
        ad.backward((v * weights).sum())
        for x, w in zip(xs, weights.data):
            assert x.grad == pytest.approx(w)

    def test_matches_finite_differences(self):
        base = np.array([0.3, -0.7, 1.2])

        def f():
            xs = [ad.Tensor(np.asarray(v), requires_grad=True)
                  for v in base]
            return (ad.stack_scalars(xs) ** 3.0).sum().item()

        xs = [ad.Tensor(np.asarray(v), requires_grad=True) for v in base]
        ad.backward((ad.stack_scalars(xs) ** 3.0).sum())
        got = np.array([float(x.grad) for x in xs])
        want = numeric_gradient(f, base)
        np.testing.assert_allclose(got, want, rtol=1e-6)

    def test_rejects_empty_and_nonscalar(self):
        with pytest.raises(ShapeError):
            ad.stack_scalars([])
        with pytest.raises(ShapeError):
            ad.stack_scalars([ad.Tensor(np.ones(2))])
