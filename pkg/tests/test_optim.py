"""Optimizer: update rule against an independent oracle, skip semantics."""

import math

import numpy as np

from flowalign.optim import AdamW, cosine_warmup_lr
from flowalign.tensor import Tensor


def reference_adamw(p, g, m, v, t, lr, b1, b2, eps, wd):
    """Straight transcription of decoupled-weight-decay Adam, one step."""
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    mhat = m / (1 - b1**t)
    vhat = v / (1 - b2**t)
    p = p - lr * (mhat / (np.sqrt(vhat) + eps) + wd * p)
    return p, m, v


class TestAdamW:
    def test_matches_reference_over_many_steps(self):
        rng = np.random.default_rng(0)
        p0 = rng.normal(size=(4, 3))
        param = Tensor(p0.copy(), requires_grad=True)
        opt = AdamW({"w": param}, lr=1e-2, weight_decay=0.03)

        ref_p, ref_m, ref_v = p0.copy(), np.zeros_like(p0), np.zeros_like(p0)
        for t in range(1, 26):
            g = rng.normal(size=p0.shape)
            param.grad = g.copy()
            opt.step()
            ref_p, ref_m, ref_v = reference_adamw(
                ref_p, g, ref_m, ref_v, t, 1e-2, 0.9, 0.999, 1e-8, 0.03
            )
            np.testing.assert_allclose(param.data, ref_p, rtol=1e-14)

    def test_none_grad_skips_entirely(self):
        rng = np.random.default_rng(1)
        a = Tensor(rng.normal(size=3), requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)
        before = b.data.copy()
        opt = AdamW({"a": a, "b": b}, lr=0.1, weight_decay=0.5)
        for _ in range(5):
            a.grad = np.ones(3)
            b.grad = None
            opt.step()
        # skipped param: no update, no decay, no moment, no step count
        assert np.array_equal(b.data, before)
        assert np.all(opt._m["b"] == 0) and np.all(opt._v["b"] == 0)
        assert opt._t["b"] == 0

    def test_zero_grad_still_decays(self):
        p = Tensor(np.full(3, 2.0), requires_grad=True)
        opt = AdamW({"w": p}, lr=0.1, weight_decay=0.5)
        p.grad = np.zeros(3)
        opt.step()
        np.testing.assert_allclose(p.data, 2.0 - 0.1 * 0.5 * 2.0, rtol=1e-15)

    def test_lr_scale_prefix(self):
        a = Tensor(np.zeros(2), requires_grad=True)
        b = Tensor(np.zeros(2), requires_grad=True)
        opt = AdamW({"tg_w": a, "other": b}, lr=1e-3, lr_scale={"tg_": 10.0})
        a.grad = np.ones(2)
        b.grad = np.ones(2)
        opt.step()
        # first Adam step moves by lr * scale regardless of gradient size
        np.testing.assert_allclose(a.data, 10.0 * b.data, rtol=1e-12)

    def test_step_lr_override(self):
        p = Tensor(np.zeros(1), requires_grad=True)
        opt = AdamW({"w": p}, lr=1.0)
        p.grad = np.ones(1)
        opt.step(lr=1e-4)
        np.testing.assert_allclose(p.data, -1e-4, rtol=1e-7)

    def test_zero_grad_clears(self):
        p = Tensor(np.zeros(1), requires_grad=True)
        opt = AdamW({"w": p})
        p.grad = np.ones(1)
        opt.zero_grad()
        assert p.grad is None


class TestSchedule:
    def test_warmup_is_linear(self):
        vals = [cosine_warmup_lr(s, 100, 1.0, 0.1, 10) for s in range(10)]
        np.testing.assert_allclose(vals, [(s + 1) / 10 for s in range(10)], rtol=1e-15)

    def test_peak_and_floor(self):
        assert cosine_warmup_lr(10, 110, 1.0, 0.1, 10) == 1.0
        assert math.isclose(cosine_warmup_lr(110, 110, 1.0, 0.1, 10), 0.1)
        # beyond the end it stays at the floor
        assert math.isclose(cosine_warmup_lr(500, 110, 1.0, 0.1, 10), 0.1)

    def test_midpoint(self):
        got = cosine_warmup_lr(60, 110, 1.0, 0.1, 10)
        assert math.isclose(got, 0.1 + 0.45 * (1 + math.cos(math.pi / 2)), rel_tol=1e-12)

    def test_no_warmup(self):
        assert cosine_warmup_lr(0, 50, 2.0, 0.0, 0) == 2.0
