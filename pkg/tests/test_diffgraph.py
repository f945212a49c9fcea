import math

import pytest

from fhnhrv import diffgraph as dg
from fhnhrv.errors import DomainError


class TestPrimitives:
    def test_tanh_at_zero(self):
        t = dg.Tape()
        x = t.leaf(0.0)
        y = dg.tanh(x)
        assert y.value == 0.0
        assert t._deps[y.index] == ((x.index, 1.0),)

    def test_mul_partials(self):
        t = dg.Tape()
        x, y = t.leaf(3.0), t.leaf(4.0)
        z = x * y
        assert z.value == 12.0
        assert dict(t._deps[z.index]) == {x.index: 4.0, y.index: 3.0}

    def test_log_at_one(self):
        t = dg.Tape()
        x = t.leaf(1.0)
        y = dg.log(x)
        assert y.value == 0.0
        assert t._deps[y.index] == ((x.index, 1.0),)

    def test_log_domain(self):
        t = dg.Tape()
        with pytest.raises(DomainError):
            dg.log(t.leaf(-1.0))

    def test_div_by_zero(self):
        t = dg.Tape()
        with pytest.raises(DomainError):
            t.leaf(1.0) / t.leaf(0.0)
        with pytest.raises(DomainError):
            2.0 / t.leaf(0.0)

    def test_sigmoid(self):
        t = dg.Tape()
        y = dg.sigmoid(t.leaf(0.0))
        assert y.value == 0.5
        assert t._deps[y.index][0][1] == 0.25
        assert dg.sigmoid(t.leaf(800.0)).value == 1.0
        assert dg.sigmoid(t.leaf(-800.0)).value == 0.0

    def test_powi(self):
        t = dg.Tape()
        x = t.leaf(2.0)
        y = dg.powi(x, 3)
        assert y.value == 8.0
        assert t._deps[y.index] == ((x.index, 12.0),)
        z = x ** 0
        assert z.value == 1.0
        assert t._deps[z.index] == ((x.index, 0.0),)
        with pytest.raises(DomainError):
            dg.powi(t.leaf(0.0), -1)

    def test_exp_overflow(self):
        t = dg.Tape()
        with pytest.raises(DomainError):
            dg.exp(t.leaf(1e4))

    def test_scalar_mixing(self):
        t = dg.Tape()
        x = t.leaf(5.0)
        assert (x + 2.0).value == 7.0
        assert (2.0 + x).value == 7.0
        assert (x - 1.0).value == 4.0
        assert (10.0 - x).value == 5.0
        assert (x * 3).value == 15.0
        assert (x / 2).value == 2.5
        assert (10.0 / x).value == 2.0
        assert (-x).value == -5.0

    def test_cross_tape_rejected(self):
        a = dg.Tape().leaf(1.0)
        b = dg.Tape().leaf(2.0)
        with pytest.raises(ValueError):
            _ = a + b

    def test_select_ge_takes_ge_branch_at_equality(self):
        t = dg.Tape()
        x = t.leaf(1.0)
        a, b = t.leaf(10.0), t.leaf(20.0)
        y = dg.select_ge(x, 1.0, a, b)
        assert y.value == 10.0
        grads = dg.backward(t, y)
        assert grads[a.index] == 1.0
        assert grads[b.index] == 0.0
        assert grads[x.index] == 0.0

    def test_select_ge_other_branch(self):
        t = dg.Tape()
        x = t.leaf(0.5)
        b = t.leaf(20.0)
        y = dg.select_ge(x, 1.0, 7.0, b)
        assert y.value == 20.0
        assert dg.backward(t, y)[b.index] == 1.0


class TestBackward:
    def test_product(self):
        t = dg.Tape()
        x, y = t.leaf(3.0), t.leaf(4.0)
        g = dg.backward(t, x * y)
        assert g[x.index] == 4.0
        assert g[y.index] == 3.0

    def test_tanh_gradient(self):
        t = dg.Tape()
        x = t.leaf(0.0)
        assert dg.backward(t, dg.tanh(x))[x.index] == 1.0

    def test_unreachable_leaf_gets_zero(self):
        t = dg.Tape()
        x, y = t.leaf(3.0), t.leaf(4.0)
        g = dg.backward(t, x * x)
        assert g[y.index] == 0.0

    def test_output_from_other_tape_rejected(self):
        t1, t2 = dg.Tape(), dg.Tape()
        out = t2.leaf(1.0)
        with pytest.raises(ValueError):
            dg.backward(t1, out)

    def test_euler_unroll_matches_finite_differences(self):
        # 100-step unroll of the oscillator written with generic primitives
        def unroll(vars):
            p1, p2, p3, v0, w0 = vars
            h = 0.1
            v, w = v0, w0
            for step in range(100):
                i_t = 0.6 if step % 40 < 2 else 0.0
                v3 = dg.powi(v, 3)
                nv = v + (v - v3 / 3.0 - p1 * w * v + i_t) * h
                nw = w + (v - p3 * w) * p2 * h
                v, w = nv, nw
            return v * v + w * w

        err = dg.grad_check(unroll, [1.0, 0.1, 0.5, 0.1, 0.0], fd_step=1e-6)
        assert err < 1e-5

    def test_repeat_run_bit_identical(self):
        def build():
            t = dg.Tape()
            x, y = t.leaf(0.7), t.leaf(-1.3)
            out = dg.tanh(x * y + dg.exp(x) / (y * y + 1.0)) * dg.sigmoid(x - y)
            return dg.backward(t, out), out.value

        g1, v1 = build()
        g2, v2 = build()
        assert v1 == v2
        assert g1 == g2


class TestGradCheck:
    def test_square(self):
        err = dg.grad_check(lambda v: v[0] * v[0], [1.0])
        assert err < 1e-9

    def test_constant_function(self):
        err = dg.grad_check(lambda v: v[0] * 0.0, [3.0])
        assert err == 0.0


class TestProperties:
    def test_linearity(self):
        t = dg.Tape()
        x, y = t.leaf(0.8), t.leaf(-0.4)

        f = dg.tanh(x * y) + dg.exp(y)
        g = dg.sigmoid(x) * y
        a, b = 2.5, -1.25
        combo = a * f + b * g
        gc = dg.backward(t, combo)
        gf = dg.backward(t, f)
        gg = dg.backward(t, g)
        for i in (x.index, y.index):
            expect = a * gf[i] + b * gg[i]
            assert gc[i] == pytest.approx(expect, rel=1e-12)

    def test_reverse_cost_bounded(self):
        t = dg.Tape()
        x = t.leaf(0.3)
        y = x
        for _ in range(200):
            y = dg.tanh(y * x + 0.1)
        # every node has at most 4 dependencies, so the reverse sweep does
        # at most 4 multiply-accumulates per forward node
        assert t.dep_count() <= 4 * len(t)

    def test_topological_order(self):
        t = dg.Tape()
        x = t.leaf(1.0)
        y = dg.exp(x * 2.0) + dg.log(x + 3.0)
        _ = y
        assert t.check_topological()

    def test_fused_fhn_step_matches_generic(self):
        # same step computed with fused node and with generic primitives
        vals = dict(v=0.4, w=0.2, p1=1.3, p2=0.12, p3=0.7, amp=0.9)
        h, pulse = 0.1, 1.0

        t1 = dg.Tape()
        l1 = {k: t1.leaf(v) for k, v in vals.items()}
        nv, nw = t1.fhn_step(l1["v"], l1["w"], l1["p1"], l1["p2"], l1["p3"], l1["amp"], pulse, h)
        out1 = nv * nw
        g1 = dg.backward(t1, out1)

        t2 = dg.Tape()
        l2 = {k: t2.leaf(v) for k, v in vals.items()}
        v, w = l2["v"], l2["w"]
        nv2 = v + (v - dg.powi(v, 3) / 3.0 - l2["p1"] * w * v + l2["amp"] * pulse) * h
        nw2 = w + (v - l2["p3"] * w) * l2["p2"] * h
        out2 = nv2 * nw2
        g2 = dg.backward(t2, out2)

        assert out1.value == pytest.approx(out2.value, rel=1e-14)
        for k in vals:
            assert g1[l1[k].index] == pytest.approx(g2[l2[k].index], rel=1e-12, abs=1e-15)

    def test_rate_step_smooth_matches_generic(self):
        acc0, v0, p40, inv_t = 1.5, 0.9, 0.7, 10.0

        t1 = dg.Tape()
        acc, v, p4 = t1.leaf(acc0), t1.leaf(v0), t1.leaf(p40)
        out1 = t1.rate_step_smooth(acc, v, p4, inv_t)
        g1 = dg.backward(t1, out1)

        t2 = dg.Tape()
        acc2, v2, p42 = t2.leaf(acc0), t2.leaf(v0), t2.leaf(p40)
        out2 = acc2 + v2 * dg.sigmoid((v2 - p42) * inv_t)
        g2 = dg.backward(t2, out2)

        assert out1.value == pytest.approx(out2.value, rel=1e-14)
        for i, j in ((acc.index, acc2.index), (v.index, v2.index), (p4.index, p42.index)):
            assert g1[i] == pytest.approx(g2[j], rel=1e-12)
