import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from disan import autodiff as ad
from disan.disa import disa_block, disa_scores, disa_trace, fusion_gate, make_mask
from disan.tensor import NEG_INF, ShapeError

import oracles
from conftest import block_dict, random_block


class TestMakeMask:
    def test_forward(self):
        m = make_mask("forward", 3).matrix
        allowed = {(0, 1), (0, 2), (1, 2)}
        for i in range(3):
            for j in range(3):
                assert m[i, j] == (0.0 if (i, j) in allowed else NEG_INF)

    def test_diag(self):
        m = make_mask("diag", 2).matrix
        np.testing.assert_array_equal(m, [[NEG_INF, 0.0], [0.0, NEG_INF]])

    def test_backward_single(self):
        np.testing.assert_array_equal(make_mask("backward", 1).matrix, [[NEG_INF]])

    def test_backward_is_forward_transposed(self):
        np.testing.assert_array_equal(make_mask("backward", 5).matrix, make_mask("forward", 5).matrix.T)

    def test_padding_masks_rows_and_columns(self):
        m = make_mask("none", 4, length=2).matrix
        assert (m[2:, :] == NEG_INF).all() and (m[:, 2:] == NEG_INF).all()
        assert (m[:2, :2] == 0.0).all()

    def test_read_only(self):
        with pytest.raises(ValueError):
            make_mask("diag", 2).matrix[0, 0] = 0.0

    def test_errors(self):
        with pytest.raises(ValueError):
            make_mask("forward", 0)
        with pytest.raises(ValueError):
            make_mask("sideways", 3)


class TestScores:
    def test_zero_weights(self, rng):
        p = random_block(3, 3, rng)
        for w in (p.W1, p.W2, p.b1):
            w.value[...] = 0.0
        out = disa_scores(rng.normal(size=(3, 4)), p, make_mask("none", 4)).value
        assert (out == 0.0).all()

    def test_bounded_and_masked(self, rng):
        p = random_block(3, 3, rng, scale=5.0)
        out = disa_scores(rng.normal(scale=5.0, size=(3, 4)), p, make_mask("forward", 4)).value
        m = make_mask("forward", 4).matrix
        assert (out[:, m == NEG_INF] == NEG_INF).all()
        assert (np.abs(out[:, m == 0.0]) <= p.c).all()

    def test_mask_size_mismatch(self, rng):
        with pytest.raises(ShapeError):
            disa_scores(rng.normal(size=(3, 4)), random_block(3, 3, rng), make_mask("none", 3))


class TestFusionGate:
    def test_zero_weights_average(self, rng):
        p = random_block(2, 3, rng)
        for w in (p.Wf1, p.Wf2, p.bf):
            w.value[...] = 0.0
        s, h = ad.constant(rng.normal(size=(3, 4))), ad.constant(rng.normal(size=(3, 4)))
        u, gate = fusion_gate(s, h, p)
        assert (gate.value == 0.5).all()
        np.testing.assert_allclose(u.value, (h.value + s.value) / 2, atol=1e-15)

    def test_equal_inputs(self, rng):
        h = ad.constant(rng.normal(size=(3, 4)))
        u, _ = fusion_gate(h, h, random_block(2, 3, rng))
        np.testing.assert_allclose(u.value, h.value, atol=1e-15)

    def test_output_between_inputs(self, rng):
        for _ in range(20):
            p = random_block(2, 3, rng, scale=2.0)
            s, h = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
            u, gate = fusion_gate(ad.constant(s), ad.constant(h), p)
            lo, hi = np.minimum(s, h), np.maximum(s, h)
            assert ((u.value >= lo - 1e-12) & (u.value <= hi + 1e-12)).all()
            assert ((gate.value > 0) & (gate.value < 1)).all()

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            fusion_gate(ad.constant(np.zeros((3, 2))), ad.constant(np.zeros((3, 3))), random_block(2, 3, rng))


class TestBlock:
    def test_single_token_forward(self, rng):
        p = random_block(3, 4, rng)
        t = disa_trace(rng.normal(size=(3, 1)), p, make_mask("forward", 1))
        assert (t.s.value == 0.0).all()
        np.testing.assert_array_equal(t.u.value, t.gate.value * t.h.value)

    @pytest.mark.parametrize("kind", ["diag", "forward", "backward", "none"])
    def test_matches_brute_force(self, kind, rng):
        p = random_block(3, 4, rng)
        x = rng.normal(size=(3, 4))
        want = oracles.disa_block(x, block_dict(p), kind)
        t = disa_trace(x, p, make_mask(kind, 4))
        for name in ("u", "h", "s", "gate"):
            np.testing.assert_allclose(getattr(t, name).value, want[name], atol=1e-12, rtol=0)
        np.testing.assert_allclose(t.probs, want["probs"], atol=1e-12, rtol=0)

    @pytest.mark.parametrize("kind", ["diag", "forward", "backward"])
    def test_fused_and_generic_agree(self, kind, rng):
        p = random_block(3, 4, rng)
        x = rng.normal(size=(3, 5))
        a = disa_block(x, p, make_mask(kind, 5), fused=True).value
        b = disa_block(x, p, make_mask(kind, 5), fused=False).value
        np.testing.assert_allclose(a, b, atol=1e-13, rtol=0)

    def test_diag_permutation_equivariance(self, rng):
        p = random_block(3, 4, rng)
        x = rng.normal(size=(3, 5))
        out = disa_block(x, p, make_mask("diag", 5)).value
        for _ in range(10):
            perm = rng.permutation(5)
            np.testing.assert_allclose(disa_block(x[:, perm], p, make_mask("diag", 5)).value, out[:, perm], atol=1e-12, rtol=0)

    def test_empty_input(self, rng):
        with pytest.raises(ShapeError):
            disa_block(np.zeros((3, 0)), random_block(3, 4, rng), np.zeros((0, 0)))

    @pytest.mark.parametrize("kind", ["forward", "backward", "diag"])
    def test_gradients(self, kind):
        rng = np.random.default_rng(0)
        p = random_block(4, 5, rng)
        x = ad.leaf(rng.normal(size=(4, 3)))
        w = rng.normal(size=(5, 3))
        groups = p.groups() + [ad.ParamGroup("x", x)]
        loss = lambda: ad.total(ad.mul(disa_block(x, p, make_mask(kind, 3)), ad.constant(w)))  # noqa: E731
        assert ad.grad_check(loss, groups, 1e-5) < 1e-4


# Causality: perturbing tokens outside a column's visible range leaves it bit-identical.
_block_cache = {}


def _causal_block():
    if "p" not in _block_cache:
        _block_cache["p"] = random_block(3, 4, np.random.default_rng(7))
    return _block_cache["p"]


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(2, 6),
    data=st.data(),
    seed=st.integers(0, 2**31),
)
def test_causality_by_perturbation(n, data, seed):
    rng = np.random.default_rng(seed)
    p = _causal_block()
    x = rng.normal(size=(3, n))
    k = data.draw(st.integers(0, n - 1))
    y = x.copy()
    y[:, k] += rng.normal(size=3)
    fw0, fw1 = (disa_block(v, p, make_mask("forward", n)).value for v in (x, y))
    bw0, bw1 = (disa_block(v, p, make_mask("backward", n)).value for v in (x, y))
    # forward columns j < k never see token k; backward columns j > k never see it
    assert fw0[:, :k].tobytes() == fw1[:, :k].tobytes()
    assert bw0[:, k + 1:].tobytes() == bw1[:, k + 1:].tobytes()
