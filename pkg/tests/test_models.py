import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.metrics import accuracy_score, f1_score, log_loss

from ksmkd import tensor as T
from ksmkd.data import TokenBatch
from ksmkd.errors import ConfigError
from ksmkd.losses import combine_soft, knowledge_losses
from ksmkd.models import (
    EncoderConfig,
    EncoderModel,
    LayerMap,
    ModelOutput,
    evaluate,
    init_student_from_teacher,
    macro_f1,
    metrics_from_logits,
    skip_layer_map,
)
from ksmkd.data import EncodedSplit

import oracles


def toy_batch(rng, b=3, t=6, vocab=12):
    ids = rng.integers(4, vocab, size=(b, t))
    ids[:, 0] = 1
    mask = np.ones((b, t), dtype=bool)
    mask[0, 4:] = False
    ids[~mask] = 0
    return TokenBatch(ids, mask, rng.integers(0, 2, size=b))


class TestEncoder:
    cfg = EncoderConfig(num_layers=4, hidden_size=16, num_heads=2, vocab_size=12, max_seq_len=8, num_classes=3)

    def test_zero_head_gives_uniform_probabilities(self, rng):
        m = EncoderModel(self.cfg, seed=0, zero_head=True)
        probs = T.softmax(m.forward(toy_batch(rng)).logits).data
        assert np.allclose(probs, 1 / 3)

    def test_eval_forward_is_deterministic(self, rng):
        m = EncoderModel(self.cfg, seed=1)
        b = toy_batch(rng)
        a1, a2 = m.forward(b), m.forward(b)
        assert np.array_equal(a1.logits.data, a2.logits.data)

    def test_one_cls_embedding_per_layer(self, rng):
        out = EncoderModel(self.cfg).forward(toy_batch(rng))
        assert len(out.cls_embeddings) == 4
        assert all(h.shape == (3, 16) for h in out.cls_embeddings)
        assert out.logits.shape == (3, 3)

    def test_padding_columns_do_not_change_outputs(self, rng):
        m = EncoderModel(self.cfg, seed=2)
        b = toy_batch(rng, t=5)
        ids = np.concatenate([b.ids, np.zeros((3, 3), dtype=int)], axis=1)
        mask = np.concatenate([b.mask, np.zeros((3, 3), dtype=bool)], axis=1)
        wide = m.forward(TokenBatch(ids, mask))
        narrow = m.forward(b)
        assert np.allclose(wide.logits.data, narrow.logits.data, atol=1e-12)

    def test_same_seed_same_weights(self):
        a, b = EncoderModel(self.cfg, seed=5), EncoderModel(self.cfg, seed=5)
        assert all(np.array_equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))

    def test_train_mode_requires_rng(self, rng):
        with pytest.raises(ValueError):
            EncoderModel(self.cfg).forward(toy_batch(rng), train_mode=True)

    def test_rejects_bad_ids(self):
        m = EncoderModel(self.cfg)
        with pytest.raises(ValueError):
            m.forward(TokenBatch(np.full((1, 3), 99), np.ones((1, 3), bool)))
        with pytest.raises(ValueError):
            m.forward(TokenBatch(np.ones((1, 9), int), np.ones((1, 9), bool)))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            EncoderConfig(hidden_size=10, num_heads=4)
        with pytest.raises(ConfigError):
            EncoderConfig(num_layers=0)
        assert EncoderConfig(hidden_size=8, num_heads=2).ffn_size == 32

    def test_copy_is_independent(self):
        m = EncoderModel(self.cfg, seed=3)
        c = m.copy()
        c.tok_emb.data[0, 0] += 1.0
        assert m.tok_emb.data[0, 0] != c.tok_emb.data[0, 0]

    def test_student_from_teacher_copies_bottom_layers(self):
        teacher = EncoderModel(self.cfg, seed=4)
        student = init_student_from_teacher(teacher, EncoderConfig(**{**self.cfg.to_dict(), "num_layers": 2}))
        ts, ss = teacher.state_dict(), student.state_dict()
        for name, arr in ss.items():
            assert np.array_equal(arr, ts[name]), name
        assert not any(k.startswith("blocks.2") for k in ss)

    def test_student_from_teacher_shape_checks(self):
        teacher = EncoderModel(self.cfg)
        with pytest.raises(ConfigError):
            init_student_from_teacher(teacher, EncoderConfig(**{**self.cfg.to_dict(), "hidden_size": 8}))


class TestLayerMap:
    def test_three_of_six(self):
        assert skip_layer_map(3, 6).as_dict() == {1: 2, 2: 4, 3: 6}

    def test_six_of_twelve(self):
        assert skip_layer_map(6, 12).as_dict() == {i: 2 * i for i in range(1, 7)}

    def test_fractional_ratio_default(self):
        assert skip_layer_map(2, 5).as_dict() == {1: 2, 2: 5}

    def test_fractional_ratio_ceiling(self):
        assert skip_layer_map(2, 5, "ceil").as_dict() == {1: 3, 2: 5}
        assert skip_layer_map(3, 12, "ceil").as_dict() == skip_layer_map(3, 12).as_dict() == {1: 4, 2: 8, 3: 12}

    def test_student_deeper_than_teacher(self):
        with pytest.raises(ConfigError):
            skip_layer_map(4, 2)

    def test_invalid_maps(self):
        with pytest.raises(ConfigError):
            LayerMap(2, 4, (2, 2))
        with pytest.raises(ConfigError):
            LayerMap(2, 4, (1, 3))

    @given(st.integers(1, 24), st.integers(0, 24), st.sampled_from(["floor", "ceil"]))
    def test_properties(self, ls, extra, rounding):
        lt = ls + extra
        m = skip_layer_map(ls, lt, rounding)
        values = [m(i) for i in range(1, ls + 1)]
        assert values[-1] == lt
        assert all(b > a for a, b in zip(values, values[1:]))
        assert all(1 <= v <= lt for v in values)
        # enumeration oracles: largest j with j*ls <= i*lt, smallest j with j*ls >= i*lt
        if rounding == "floor":
            ref = [max(j for j in range(1, lt + 1) if j * ls <= i * lt) for i in range(1, ls + 1)]
        else:
            ref = [min(j for j in range(1, lt + 1) if j * ls >= i * lt) for i in range(1, ls + 1)]
        assert values == ref
        if lt % ls == 0:
            assert values == [i * lt // ls for i in range(1, ls + 1)]


class TestMetrics:
    def test_perfect_predictor(self):
        logits = np.array([[50.0, -50.0], [-50.0, 50.0]])
        m = metrics_from_logits(logits, np.array([0, 1]))
        assert m.loss == pytest.approx(0.0, abs=1e-30) and m.accuracy == 1.0 and m.f1 == 1.0

    def test_uniform_predictor(self):
        m = metrics_from_logits(np.zeros((4, 2)), np.array([0, 1, 0, 1]))
        assert m.loss == pytest.approx(math.log(2), rel=1e-15)
        assert m.accuracy == 0.5

    def test_matches_independent_oracle(self):
        rng = np.random.default_rng(20)
        logits = rng.normal(size=(20, 3)) * 2
        labels = rng.integers(0, 3, size=20)
        m = metrics_from_logits(logits, labels)
        probs = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)
        assert m.loss == pytest.approx(float(oracles.cross_entropy(logits, labels)), rel=1e-12)
        assert m.loss == pytest.approx(log_loss(labels, probs, labels=[0, 1, 2]), rel=1e-9)
        assert m.accuracy == accuracy_score(labels, logits.argmax(1))
        assert m.f1 == pytest.approx(f1_score(labels, logits.argmax(1), average="macro"), rel=1e-12)

    @given(st.lists(st.integers(0, 3), min_size=1, max_size=30), st.integers(0, 10_000))
    def test_macro_f1_property(self, y_true, seed):
        y_true = np.array(y_true)
        y_pred = np.random.default_rng(seed).integers(0, 4, size=len(y_true))
        present = sorted(set(range(4)))
        ref = f1_score(y_true, y_pred, labels=present, average="macro", zero_division=0)
        assert macro_f1(y_true, y_pred, 4) == pytest.approx(ref, abs=1e-12)

    def test_evaluate_empty_split(self):
        cfg = EncoderConfig(num_layers=1, hidden_size=8, num_heads=2, vocab_size=6, max_seq_len=4)
        empty = EncodedSplit(np.zeros((0, 4), int), np.zeros((0, 4), bool), np.zeros(0, int))
        with pytest.raises(ValueError):
            evaluate(EncoderModel(cfg), empty)


def test_end_to_end_gradient_through_two_layer_model():
    """Weighted knowledge loss of a 2-layer H=8 student against a fixed 4-layer teacher."""
    rng = np.random.default_rng(0)
    scfg = EncoderConfig(num_layers=2, hidden_size=8, num_heads=2, vocab_size=12, max_seq_len=6, num_classes=3,
                         init_std=0.3, dropout_rate=0.1, intermediate_size=16)
    tcfg = EncoderConfig(**{**scfg.to_dict(), "num_layers": 4})
    student, teacher = EncoderModel(scfg, seed=1), EncoderModel(tcfg, seed=2)
    batch = toy_batch(rng, b=3, t=6)
    labels = np.array([0, 2, 1])
    with T.no_grad():
        t_out = teacher.forward(batch)
    lmap = skip_layer_map(2, 4)
    weights = [0.3, 0.5, 0.7, 0.9]

    def loss_fn():
        out = student.forward(batch, train_mode=True, rng=np.random.default_rng(9))
        return combine_soft(knowledge_losses(out, t_out, labels, lmap), weights)

    student.zero_grad()
    loss_fn().backward()
    analytic = np.concatenate([p.grad.ravel() for p in student.parameters()])
    numeric = []
    for p in student.parameters():
        def f():
            with T.no_grad():
                return loss_fn().item()
        numeric.append(oracles.numgrad(f, p.data, 1e-5).ravel())
    numeric = np.concatenate(numeric)
    err = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    assert err <= 1e-3
    assert isinstance(ModelOutput(t_out.logits, t_out.cls_embeddings), ModelOutput)
