import numpy as np
import pytest

from disan import autodiff as ad
from disan.disa import disa_trace, make_mask
from disan.model import (
    EncoderParams,
    HeadParams,
    Model,
    ModelConfig,
    classify_predict,
    disan_encode,
    encode_trace,
    nli_features,
    nli_predict,
    param_count,
)
from disan.attention import source2token_pool
from disan.tensor import ShapeError

import oracles
from conftest import block_dict, randomize


def random_encoder(d_e, d_h, rng, directional=True, scale=0.7):
    enc = EncoderParams.init(d_e, d_h, rng, directional=directional)
    randomize(enc.groups(), rng, scale)
    return enc


def s2t_dict(p):
    return {"W": p.W.value, "W1": p.W1.value, "b1": p.b1.value, "b": p.b.value}


class TestEncode:
    @pytest.mark.parametrize("n", [1, 2, 7])
    def test_output_length(self, n, rng):
        enc = random_encoder(3, 4, rng)
        assert disan_encode(rng.normal(size=(3, n)), enc).value.shape == (8,)

    def test_single_token(self, rng):
        enc = random_encoder(3, 4, rng)
        x = rng.normal(size=(3, 1))
        t = encode_trace(x, enc)
        fw, bw = t.blocks
        for b in t.blocks:
            assert (b.s.value == 0.0).all()
        col = np.concatenate([fw.gate.value * fw.h.value, bw.gate.value * bw.h.value])
        np.testing.assert_array_equal(t.encoding.value, col[:, 0])

    def test_matches_brute_force(self, rng):
        enc = random_encoder(3, 4, rng)
        x = rng.normal(size=(3, 5))
        want = oracles.disan_encode(x, block_dict(enc.fw), block_dict(enc.bw), s2t_dict(enc.s2t))
        np.testing.assert_allclose(disan_encode(x, enc).value, want, atol=1e-12, rtol=0)

    def test_composition(self, rng):
        enc = random_encoder(3, 4, rng)
        x = rng.normal(size=(3, 4))
        ufw = disa_trace(x, enc.fw, make_mask("forward", 4)).u
        ubw = disa_trace(x, enc.bw, make_mask("backward", 4)).u
        want = source2token_pool(ad.concat_vertical(ufw, ubw), enc.s2t).value
        np.testing.assert_array_equal(disan_encode(x, enc).value, want)

    def test_blocks_are_untied(self, rng):
        enc = EncoderParams.init(3, 4, rng)
        assert enc.fw.Wh is not enc.bw.Wh
        assert not np.array_equal(enc.fw.Wh.value, enc.bw.Wh.value)

    def test_empty_sentence(self, rng):
        with pytest.raises(ShapeError):
            disan_encode(np.zeros((3, 0)), random_encoder(3, 4, rng))

    def test_no_direction_is_order_blind(self, rng):
        enc = random_encoder(3, 4, rng, directional=False)
        x = rng.normal(size=(3, 5))
        base = disan_encode(x, enc).value
        for _ in range(5):
            perm = rng.permutation(5)
            np.testing.assert_allclose(disan_encode(x[:, perm], enc).value, base, atol=1e-12, rtol=0)

    def test_directional_encoding_sees_order(self, rng):
        enc = random_encoder(3, 4, rng)
        x = rng.normal(size=(3, 5))
        assert not np.allclose(disan_encode(x, enc).value, disan_encode(x[:, ::-1], enc).value)


class TestHeads:
    def test_same_sentences(self, rng):
        s = ad.constant(rng.normal(size=6))
        r = nli_features(s, s).value
        assert (r[12:18] == 0.0).all()
        np.testing.assert_array_equal(r[18:], s.value**2)

    def test_feature_length(self, rng):
        s = ad.constant(np.zeros(600))
        assert nli_features(s, s).value.shape == (2400,)

    def test_nli_distribution(self, rng):
        enc = random_encoder(3, 4, rng)
        head = HeadParams.init(32, 3, rng, hidden=7)
        p = nli_predict(rng.normal(size=(3, 4)), rng.normal(size=(3, 2)), enc, head)
        assert p.shape == (3,)
        assert abs(p.sum() - 1.0) <= 1e-12

    def test_classify_distribution(self, rng):
        enc = random_encoder(3, 4, rng)
        p = classify_predict(rng.normal(size=(3, 4)), enc, HeadParams.init(8, 5, rng, hidden=6))
        assert p.shape == (5,) and abs(p.sum() - 1.0) <= 1e-12

    def test_zero_head_is_uniform(self, rng):
        enc = random_encoder(3, 4, rng)
        head = HeadParams.init(8, 4, rng, hidden=6)
        for g in head.groups():
            g.tensor.value[...] = 0.0
        np.testing.assert_allclose(classify_predict(rng.normal(size=(3, 3)), enc, head), 0.25, atol=1e-15)

    def test_classify_matches_brute_force(self, rng):
        enc = random_encoder(2, 3, rng)
        head = HeadParams.init(6, 2, rng, hidden=4)
        randomize(head.groups(), rng, 0.7)
        x = rng.normal(size=(2, 3))
        s = oracles.disan_encode(x, block_dict(enc.fw), block_dict(enc.bw), s2t_dict(enc.s2t))
        Wfc, bfc = head.Wfc.value.tolist(), head.bfc.value.tolist()
        Wout, bout = head.Wout.value.tolist(), head.bout.value.tolist()
        hid = [oracles.act("elu", v + b) for v, b in zip(oracles.matvec(Wfc, s), bfc)]
        logits = [v + b for v, b in zip(oracles.matvec(Wout, hid), bout)]
        np.testing.assert_allclose(classify_predict(x, enc, head), oracles.softmax(logits), atol=1e-12, rtol=0)

    def test_too_few_classes(self, rng):
        with pytest.raises(ValueError):
            HeadParams.init(4, 1, rng)


class TestParamCount:
    def test_default_nli(self):
        m = Model.create(ModelConfig(), np.zeros((300, 2)), np.random.default_rng(0))
        assert m.param_count() == 2_344_203
        assert m.param_count(include_embeddings=True) == 2_344_203 + 600

    def test_tiny_classifier_manual_tally(self):
        cfg = ModelConfig(task="classify", d_e=1, d_h=1, num_classes=2)
        m = Model.create(cfg, np.zeros((1, 3)), np.random.default_rng(0))
        blocks = 2 * 8  # Wh, bh, W1, W2, b1, Wf1, Wf2, bf are all scalars
        s2t = 2 * 2 * 2 + 2 + 2
        head = (300 * 2 + 300) + (2 * 300 + 2)
        assert blocks + s2t + head == 1530
        assert m.param_count() == 1530

    def test_empty(self):
        assert param_count() == 0

    def test_single_dense_layer(self):
        class Dense:
            def groups(self):
                return [ad.ParamGroup("W", ad.leaf(np.zeros((4, 4)))), ad.ParamGroup("b", ad.leaf(np.zeros(4)))]

        assert param_count(Dense()) == 4 * 4 + 4


class TestModel:
    @pytest.mark.parametrize("variant", ["disan", "disan-no-direction", "wordemb-additive", "wordemb-s2t"])
    def test_variants_predict(self, variant, rng):
        cfg = ModelConfig(task="classify", variant=variant, d_e=4, d_h=3, num_classes=2, head_hidden=5)
        m = Model.create(cfg, rng.normal(size=(4, 6)), rng)
        p = m.predict_proba([2, 3, 4])
        assert abs(p.sum() - 1.0) <= 1e-12

    def test_nli_takes_pairs(self, rng):
        cfg = ModelConfig(d_e=4, d_h=3, head_hidden=5)
        m = Model.create(cfg, rng.normal(size=(4, 6)), rng)
        assert m.predict_proba(([2, 3], [4, 5, 1])).shape == (3,)

    def test_bad_config(self):
        with pytest.raises(ValueError):
            ModelConfig(task="nli", num_classes=5)
        with pytest.raises(ValueError):
            ModelConfig(variant="lstm")

    def test_embedding_dim_checked(self, rng):
        with pytest.raises(ShapeError):
            Model.create(ModelConfig(d_e=4, d_h=3), rng.normal(size=(5, 6)), rng)

    def test_frozen_embeddings_excluded(self, rng):
        m = Model.create(ModelConfig(d_e=4, d_h=3, head_hidden=5), rng.normal(size=(4, 6)), rng)
        assert "embedding" in [g.name for g in m.param_groups()]
        m.frozen_embeddings = True
        assert "embedding" not in [g.name for g in m.param_groups()]
