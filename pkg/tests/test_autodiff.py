import math

import numpy as np
import pytest

from disan import autodiff as ad
from disan.autodiff import GradientError, ParamGroup
from disan.tensor import NEG_INF

import oracles


def fd_check(build, inputs, eps=1e-6):
    """Max relative adjoint/finite-difference error over all input entries."""
    for x in inputs:
        x.zero_grad()
    ad.backward(build())
    worst = 0.0
    for x in inputs:
        adj = x.grad.reshape(-1).copy()
        flat = x.value.reshape(-1)
        for idx in range(flat.size):
            saved = flat[idx]
            flat[idx] = saved + eps
            up = float(build().value)
            flat[idx] = saved - eps
            down = float(build().value)
            flat[idx] = saved
            d = (up - down) / (2 * eps)
            worst = max(worst, abs(adj[idx] - d) / max(abs(adj[idx]), abs(d), 1e-8))
    return worst


class TestBackward:
    def test_square(self):
        w = ad.leaf(3.0)
        ad.backward(ad.mul(w, w))
        assert w.grad == 6.0

    def test_tanh_at_zero(self):
        w = ad.leaf(0.0)
        ad.backward(ad.tanh(w))
        assert w.grad == 1.0

    def test_repeated_paths_accumulate(self):
        w = ad.leaf(2.0)
        y = ad.add(ad.mul(w, w), ad.scale(w, 3.0))
        ad.backward(y)
        assert w.grad == 7.0

    def test_interior_adjoints_populated(self):
        w = ad.leaf(np.array([1.0, 2.0]))
        mid = ad.scale(w, 3.0)
        ad.backward(ad.total(ad.mul(mid, mid)))
        np.testing.assert_array_equal(mid.grad, 2 * mid.value)

    def test_masked_softmax_against_finite_differences(self, rng):
        s = ad.leaf(rng.normal(size=4))
        t = rng.normal(size=4)

        def build():
            return ad.total(ad.mul(ad.masked_softmax(s), ad.constant(t)))

        assert fd_check(build, [s]) < 1e-6

    def test_masked_softmax_gradient_skips_masked(self, rng):
        s = ad.leaf(rng.normal(size=4))
        mask = np.array([0.0, NEG_INF, 0.0, NEG_INF])
        ad.backward(ad.total(ad.mul(ad.masked_softmax(s, mask), ad.constant(rng.normal(size=4)))))
        assert s.grad[1] == 0.0 and s.grad[3] == 0.0

    def test_non_scalar_root(self):
        with pytest.raises(GradientError):
            ad.backward(ad.leaf(np.ones(3)))

    def test_second_backward_without_reset_is_an_error(self):
        w = ad.leaf(3.0)
        ad.backward(ad.mul(w, w))
        with pytest.raises(GradientError):
            ad.backward(ad.mul(w, w))
        w.zero_grad()
        ad.backward(ad.mul(w, w))
        assert w.grad == 6.0

    def test_same_root_twice(self):
        w = ad.leaf(3.0)
        y = ad.mul(w, w)
        ad.backward(y)
        w.zero_grad()
        with pytest.raises(GradientError):
            ad.backward(y)

    def test_dropout_mask_reused_in_backward(self, rng):
        x = ad.leaf(rng.normal(size=(3, 2)))
        mask = (rng.random((3, 2)) < 0.5) / 0.5
        out = ad.dropout(x, mask)
        ad.backward(ad.total(out))
        np.testing.assert_array_equal(x.grad, out.cache)
        np.testing.assert_array_equal(out.cache, mask)


UNARY = {
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "elu": ad.elu,
    "one_minus": ad.one_minus,
    "transpose": ad.transpose,
    "squared_norm": ad.squared_norm,
    "log_softmax": lambda a: ad.log_softmax(ad.reshape(a, (-1,))),
    "sum_axis0": lambda a: ad.sum_axis(a, 0),
    "sum_axis1": lambda a: ad.sum_axis(a, 1),
    "masked_softmax_rows": lambda a: ad.masked_softmax(a, axis=1),
    "scale": lambda a: ad.scale(a, -2.5),
    "columns": lambda a: ad.columns(a, [2, 0, 2]),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_ops_match_finite_differences(name, rng):
    x = ad.leaf(rng.normal(size=(3, 4)))
    # keep clear of the ELU kink
    x.value[np.abs(x.value) < 1e-3] = 0.5
    w = rng.normal(size=UNARY[name](x).value.shape)

    def build():
        return ad.total(ad.mul(UNARY[name](x), ad.constant(w)))

    assert fd_check(build, [x]) < 1e-6


BINARY = {
    "add": (ad.add, (3, 4), (3, 4)),
    "add_bias": (ad.add, (3, 4), (3,)),
    "sub_bias": (ad.sub, (3, 4), (3,)),
    "mul": (ad.mul, (3, 4), (3, 4)),
    "matmul": (ad.matmul, (3, 4), (4, 2)),
    "matvec": (ad.matmul, (3, 4), (4,)),
    "pairwise_sum": (ad.pairwise_sum, (3, 4), (3, 4)),
    "weighted_sum_2d": (ad.weighted_sum, (3, 4), (3, 4)),
    "weighted_sum_3d": (ad.weighted_sum, (3, 4, 4), (3, 4)),
    "concat": (lambda a, b: ad.concat([a, b], axis=0), (3, 4), (2, 4)),
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_ops_match_finite_differences(name, rng):
    fn, sa, sb = BINARY[name]
    a, b = ad.leaf(rng.normal(size=sa)), ad.leaf(rng.normal(size=sb))
    w = rng.normal(size=fn(a, b).value.shape)

    def build():
        return ad.total(ad.mul(fn(a, b), ad.constant(w)))

    assert fd_check(build, [a, b]) < 1e-6


def test_directional_attention_matches_finite_differences(rng):
    d, n = 3, 4
    a, b, v = (ad.leaf(rng.normal(size=(d, n))) for _ in range(3))
    bias = ad.leaf(rng.normal(size=d))
    mask = np.array(oracles.mask("forward", n))
    w = rng.normal(size=(d, n))

    def build():
        return ad.total(ad.mul(ad.directional_attention(a, b, bias, v, mask, 5.0), ad.constant(w)))

    assert fd_check(build, [a, b, bias, v]) < 1e-6


def test_elu_kink_uses_unit_derivative():
    x = ad.leaf(np.array([0.0, -1.0]))
    ad.backward(ad.total(ad.elu(x)))
    np.testing.assert_allclose(x.grad, [1.0, math.exp(-1.0)])


class TestGradCheck:
    def test_sum_of_squares(self, rng):
        theta = ad.leaf(rng.normal(size=5))
        err = ad.grad_check(lambda: ad.squared_norm(theta), [ParamGroup("theta", theta)])
        assert err < 1e-9

    def test_constant_loss(self, rng):
        theta = ad.leaf(rng.normal(size=5))
        err = ad.grad_check(lambda: ad.add(ad.scale(ad.total(theta), 0.0), ad.constant(3.0)), [ParamGroup("t", theta)])
        assert err == 0.0

    def test_detects_a_wrong_gradient(self, rng):
        theta = ad.leaf(rng.normal(size=3))

        def broken():
            x = theta.value
            return ad.Node(np.sum(x**3), (theta,), lambda g: theta._accumulate(g * 2 * x))

        assert ad.grad_check(broken, [ParamGroup("t", theta)]) > 0.1

    def test_epsilon_bounds(self):
        theta = ad.leaf(np.ones(2))
        with pytest.raises(ValueError):
            ad.grad_check(lambda: ad.squared_norm(theta), [ParamGroup("t", theta)], epsilon=1e-2)

    def test_non_finite_loss(self):
        theta = ad.leaf(np.array([np.inf]))
        with pytest.raises(FloatingPointError):
            ad.grad_check(lambda: ad.squared_norm(theta), [ParamGroup("t", theta)])

    def test_leaves_parameters_untouched(self, rng):
        theta = ad.leaf(rng.normal(size=4))
        before = theta.value.copy()
        ad.grad_check(lambda: ad.squared_norm(theta), [ParamGroup("t", theta)])
        assert theta.value.tobytes() == before.tobytes()
