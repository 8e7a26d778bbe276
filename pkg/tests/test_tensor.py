"""Autodiff engine: gradient correctness, op semantics, serialization."""

import numpy as np
import pytest

import flowalign.tensor as tz
from flowalign.tensor import Tensor, check_gradients, no_grad
from flowalign.errors import (
    DegenerateInputError,
    DomainError,
    NumericError,
    ShapeMismatchError,
)


class TestBackwardMechanics:
    def test_backward_requires_scalar(self):
        x = Tensor(np.ones((2, 3)), requires_grad=True)
        with pytest.raises(ShapeMismatchError):
            (x * 2.0).backward()

    def test_shared_subexpression_counted_once_per_use(self):
        # y = u + u with u = x * x gives dy/dx = 4x exactly
        x = Tensor([1.5, -2.0, 0.25], requires_grad=True)
        u = x * x
        y = (u + u).sum()
        y.backward()
        np.testing.assert_array_equal(x.grad, 4.0 * x.data)

    def test_no_grad_blocks_recording(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with no_grad():
            y = (x * x).sum()
        assert y._backward is None and y._parents == ()
        assert not y.requires_grad

    def test_grad_accumulates_across_uses(self):
        x = Tensor([3.0], requires_grad=True)
        y = (x * 2.0 + x * 5.0).sum()
        y.backward()
        np.testing.assert_array_equal(x.grad, [7.0])

    def test_detach_cuts_graph(self):
        x = Tensor([2.0], requires_grad=True)
        y = (x.detach() * x).sum()
        y.backward()
        np.testing.assert_array_equal(x.grad, [2.0])  # only the live factor


class TestPrimitiveGradients:
    """Every primitive against central finite differences."""

    TOL = 1e-6

    def test_add_broadcast(self):
        rng = np.random.default_rng(0)
        b = Tensor(rng.normal(size=(1, 4)))
        x = Tensor(rng.normal(size=(3, 4)))
        err = check_gradients(lambda p: (p + b).sum(), x)
        assert err < self.TOL
        err = check_gradients(lambda p: (x + p).sum(), b)
        assert err < self.TOL

    def test_mul_broadcast(self):
        rng = np.random.default_rng(1)
        a = Tensor(rng.normal(size=(2, 1, 3)))
        x = Tensor(rng.normal(size=(2, 5, 3)))
        err = check_gradients(lambda p: (p * a).sum(), x)
        assert err < self.TOL
        err = check_gradients(lambda p: (x * p).sum(), a)
        assert err < self.TOL

    def test_matmul_both_sides(self):
        rng = np.random.default_rng(2)
        a = Tensor(rng.normal(size=(3, 4)))
        b = Tensor(rng.normal(size=(4, 2)))
        w = rng.normal(size=(3, 2))
        assert check_gradients(lambda p: ((p @ b) * Tensor(w)).sum(), a) < self.TOL
        assert check_gradients(lambda p: ((a @ p) * Tensor(w)).sum(), b) < self.TOL

    def test_affine_all_inputs(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(2, 5, 3)))
        w = Tensor(rng.normal(size=(3, 4)))
        b = Tensor(rng.normal(size=4))
        mixer = Tensor(rng.normal(size=(2, 5, 4)))
        assert check_gradients(lambda p: (tz.affine(p, w, b) * mixer).sum(), x) < self.TOL
        assert check_gradients(lambda p: (tz.affine(x, p, b) * mixer).sum(), w) < self.TOL
        assert check_gradients(lambda p: (tz.affine(x, w, p) * mixer).sum(), b) < self.TOL

    def test_tanh(self):
        x = Tensor(np.linspace(-2, 2, 12).reshape(3, 4))
        assert check_gradients(lambda p: tz.tanh(p).sum(), x) < self.TOL

    def test_reshape_sum_mean(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(2, 6)))
        w = Tensor(rng.normal(size=(3, 4)))
        assert check_gradients(lambda p: (p.reshape(3, 4) * w).sum(), x) < self.TOL
        assert check_gradients(lambda p: p.sum(axis=1).sum(), x) < self.TOL
        assert check_gradients(lambda p: p.mean(axis=0, keepdims=True).sum(), x) < self.TOL
        assert check_gradients(lambda p: p.mean(), x) < self.TOL

    def test_softmax(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(4, 6)))
        w = Tensor(rng.normal(size=(4, 6)))
        assert check_gradients(lambda p: (tz.softmax(p) * w).sum(), x) < self.TOL

    def test_mean_pool_time(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.normal(size=(3, 7, 2)))
        lens = np.array([7, 4, 1])
        w = Tensor(rng.normal(size=(3, 2)))
        assert (
            check_gradients(lambda p: (tz.mean_pool_time(p, lens) * w).sum(), x)
            < self.TOL
        )

    def test_l2_normalize(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(4, 5)))
        w = Tensor(rng.normal(size=(4, 5)))
        assert check_gradients(lambda p: (tz.l2_normalize(p) * w).sum(), x) < self.TOL

    def test_l2_normalize_clamped_region(self):
        # inside the clamp the map is x / eps, plain linear
        x = Tensor(np.full((2, 3), 1e-10))
        w = Tensor(np.ones((2, 3)))
        err = check_gradients(lambda p: (tz.l2_normalize(p, eps=1e-3) * w).sum(), x)
        assert err < self.TOL

    def test_cosine_similarity_both_args(self):
        rng = np.random.default_rng(8)
        a = Tensor(rng.normal(size=(5, 4)))
        b = Tensor(rng.normal(size=(5, 4)))
        assert check_gradients(lambda p: tz.cosine_similarity(p, b).sum(), a) < self.TOL
        assert check_gradients(lambda p: tz.cosine_similarity(a, p).sum(), b) < self.TOL

    def test_entropy_through_softmax(self):
        rng = np.random.default_rng(9)
        z = Tensor(rng.normal(size=(3, 6)))
        assert check_gradients(lambda p: tz.entropy(tz.softmax(p)).sum(), z) < self.TOL

    def test_embedding(self):
        rng = np.random.default_rng(10)
        table = Tensor(rng.normal(size=(6, 3)))
        ids = np.array([[0, 5, 5], [2, 0, 1]])
        w = Tensor(rng.normal(size=(2, 3, 3)))
        assert (
            check_gradients(lambda p: (tz.embedding(p, ids) * w).sum(), table)
            < self.TOL
        )

    def test_time_mix(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.normal(size=(2, 5, 3)))
        mix = rng.normal(size=(5, 5))
        w = Tensor(rng.normal(size=(2, 5, 3)))
        assert check_gradients(lambda p: (tz.time_mix(p, mix) * w).sum(), x) < self.TOL

    def test_cross_entropy(self):
        rng = np.random.default_rng(12)
        logits = Tensor(rng.normal(size=(5, 7)))
        labels = rng.integers(0, 7, size=5)
        assert check_gradients(lambda p: tz.cross_entropy(p, labels), logits) < self.TOL

    def test_stack_last(self):
        rng = np.random.default_rng(13)
        x = Tensor(rng.normal(size=(3, 2)))
        y = Tensor(rng.normal(size=(3, 2)))
        w = Tensor(rng.normal(size=(3, 2, 2)))
        assert (
            check_gradients(lambda p: (tz.stack_last([p, y]) * w).sum(), x) < self.TOL
        )


class TestOpSemantics:
    def test_softmax_rows_on_simplex(self):
        rng = np.random.default_rng(0)
        y = tz.softmax(Tensor(rng.normal(size=(50, 9)) * 30)).data
        assert np.all(y >= 0)
        np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)

    def test_softmax_matches_direct_computation(self):
        x = np.array([[1.0, 2.0, 3.0], [-5.0, 0.0, 5.0]])
        want = np.exp(x) / np.exp(x).sum(axis=1, keepdims=True)
        np.testing.assert_allclose(tz.softmax(Tensor(x)).data, want, rtol=1e-15)

    def test_mean_pool_ignores_tail(self):
        x = np.arange(24, dtype=np.float64).reshape(2, 4, 3)
        out = tz.mean_pool_time(Tensor(x), np.array([2, 4])).data
        np.testing.assert_allclose(out[0], x[0, :2].mean(axis=0))
        np.testing.assert_allclose(out[1], x[1].mean(axis=0))

    def test_mean_pool_rejects_bad_lengths(self):
        x = Tensor(np.zeros((2, 4, 3)))
        with pytest.raises(DegenerateInputError):
            tz.mean_pool_time(x, np.array([0, 2]))
        with pytest.raises(DomainError):
            tz.mean_pool_time(x, np.array([5, 2]))

    def test_entropy_uniform_is_log_n(self):
        for n in (2, 5, 12):
            w = Tensor(np.full((1, n), 1.0 / n))
            np.testing.assert_allclose(tz.entropy(w).data, np.log(n), atol=1e-12)

    def test_entropy_zero_times_log_zero_is_zero(self):
        w = Tensor([[1.0, 0.0, 0.0]])
        np.testing.assert_allclose(tz.entropy(w).data, 0.0, atol=1e-15)

    def test_entropy_rejects_off_simplex(self):
        with pytest.raises(DomainError):
            tz.entropy(Tensor([[0.6, 0.6]]))
        with pytest.raises(DomainError):
            tz.entropy(Tensor([[1.1, -0.1]]))

    def test_entropy_gradient_formula(self):
        w = np.array([[0.2, 0.3, 0.5]])
        x = Tensor(w, requires_grad=True)
        tz.entropy(x).sum().backward()
        np.testing.assert_allclose(x.grad, -(np.log(w) + 1.0), atol=1e-12)

    def test_l2_normalize_unit_rows(self):
        rng = np.random.default_rng(1)
        y = tz.l2_normalize(Tensor(rng.normal(size=(20, 6)))).data
        np.testing.assert_allclose(np.linalg.norm(y, axis=1), 1.0, atol=1e-12)

    def test_cosine_matches_numpy(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(10, 4))
        b = rng.normal(size=(10, 4))
        want = np.sum(a * b, axis=1) / (
            np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
        )
        got = tz.cosine_similarity(Tensor(a), Tensor(b)).data
        np.testing.assert_allclose(got, want, rtol=1e-14)

    def test_embedding_forward_and_scatter(self):
        rng = np.random.default_rng(3)
        table = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
        ids = np.array([1, 1, 4, 0])
        out = tz.embedding(table, ids)
        np.testing.assert_array_equal(out.data, table.data[ids])
        g = rng.normal(size=out.shape)
        (out * Tensor(g)).sum().backward()
        want = np.zeros_like(table.data)
        np.add.at(want, ids, g)
        np.testing.assert_allclose(table.grad, want, atol=1e-15)

    def test_embedding_rejects_bad_ids(self):
        table = Tensor(np.zeros((4, 2)))
        with pytest.raises(DomainError):
            tz.embedding(table, np.array([0, 4]))
        with pytest.raises(DomainError):
            tz.embedding(table, np.array([-1]))

    def test_cross_entropy_matches_logsumexp(self):
        from scipy.special import logsumexp

        rng = np.random.default_rng(4)
        logits = rng.normal(size=(6, 9)) * 3
        labels = rng.integers(0, 9, size=6)
        want = np.mean(logsumexp(logits, axis=1) - logits[np.arange(6), labels])
        got = tz.cross_entropy(Tensor(logits), labels).data
        np.testing.assert_allclose(got, want, rtol=1e-13)

    def test_matmul_shape_errors(self):
        with pytest.raises(ShapeMismatchError):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((4, 2)))
        with pytest.raises(ShapeMismatchError):
            Tensor(np.zeros(3)) @ Tensor(np.zeros((3, 2)))

    def test_time_mix_matches_einsum(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(2, 4, 3))
        m = rng.normal(size=(4, 4))
        got = tz.time_mix(Tensor(x), m).data
        np.testing.assert_allclose(got, np.einsum("ts,bsd->btd", m, x), rtol=1e-14)


class TestCheckGradients:
    def test_step_size_domain(self):
        x = Tensor([1.0])
        with pytest.raises(DomainError):
            check_gradients(lambda p: p.sum(), x, h=1e-7)
        with pytest.raises(DomainError):
            check_gradients(lambda p: p.sum(), x, h=1e-3)

    def test_non_finite_function_rejected(self):
        x = Tensor([1e200])
        with np.errstate(over="ignore"):
            with pytest.raises(NumericError):
                check_gradients(lambda p: (p * p * p * p).sum() * 1e200, x)

    def test_detects_wrong_gradient(self):
        # an op with a deliberately broken backward must be flagged
        def bad_double(p):
            def backward(g):
                tz._accumulate(p, 3.0 * g)  # claims slope 3, truth is 2

            return tz._make(2.0 * p.data, (p,), backward).sum()

        x = Tensor(np.array([1.0, -0.5]), requires_grad=True)
        assert check_gradients(bad_double, x) > 0.1

    def test_smooth_composite_is_accurate(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.normal(size=(3, 3)))
        w = Tensor(rng.normal(size=(3, 3)))

        def f(p):
            return (tz.tanh(p @ w) * tz.softmax(p)).sum()

        assert check_gradients(f, x) < 1e-7


class TestSerialization:
    def test_json_round_trip_bit_exact(self):
        rng = np.random.default_rng(0)
        vals = np.concatenate([rng.normal(size=10), [0.1, 1e-300, -1e300, 0.0]])
        x = Tensor(vals.reshape(2, 7))
        back = tz.tensor_from_json(tz.tensor_to_json(x))
        assert back.shape == x.shape
        assert np.array_equal(back.data, x.data)

    def test_json_survives_text_round_trip(self):
        import json

        x = Tensor(np.array([[0.1 + 0.2, 1.0 / 3.0]]))
        back = tz.tensor_from_json(json.loads(json.dumps(tz.tensor_to_json(x))))
        assert np.array_equal(back.data, x.data)

    def test_bytes_round_trip(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(3, 4, 2)))
        back = tz.tensor_from_bytes(tz.tensor_to_bytes(x))
        assert back.shape == (3, 4, 2)
        assert np.array_equal(back.data, x.data)

    def test_bytes_rejects_bad_magic(self):
        with pytest.raises(DomainError):
            tz.tensor_from_bytes(b"NOPE" + b"\x00" * 16)
