import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from ksmkd import checkpoint as ck
from ksmkd.data import TextExample, Vocabulary
from ksmkd.errors import CheckpointError
from ksmkd.ksm import KnowledgeSelectionModule, KsmConfig
from ksmkd.models import EncoderConfig, EncoderModel

CFG = EncoderConfig(num_layers=2, hidden_size=8, num_heads=2, vocab_size=10, max_seq_len=6, num_classes=3)


def same(a, b):
    sa, sb = a.state_dict(), b.state_dict()
    return sa.keys() == sb.keys() and all(np.array_equal(sa[k], sb[k]) for k in sa)


def test_model_round_trip(tmp_path):
    m = EncoderModel(CFG, seed=3)
    vocab = Vocabulary.build([TextExample("a b c", 0)])
    ck.save_model(tmp_path / "m.ckpt", m, vocab, {"note": "x"})
    back, v, extra = ck.load_model(tmp_path / "m.ckpt")
    assert same(m, back) and back.config == m.config
    assert v.tokens == vocab.tokens and extra == {"note": "x"}


def test_ksm_round_trip(tmp_path):
    k = KnowledgeSelectionModule(8, 4, KsmConfig(feature_size=3, hidden_size=5, threshold=0.3), seed=2, teacher_cls_size=6)
    ck.save_ksm(tmp_path / "k.ckpt", k)
    back, _ = ck.load_ksm(tmp_path / "k.ckpt")
    assert same(k, back) and back.config == k.config and back.teacher_cls_size == 6


def test_same_content_same_bytes(tmp_path):
    m = EncoderModel(CFG, seed=1)
    ck.save_model(tmp_path / "a", m)
    ck.save_model(tmp_path / "b", m.copy())
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


@pytest.mark.parametrize("keep", [0, 10, 30, -1, -33, -100])
def test_truncated(tmp_path, keep):
    ck.save_model(tmp_path / "m", EncoderModel(CFG))
    blob = (tmp_path / "m").read_bytes()
    (tmp_path / "t").write_bytes(blob[:keep])
    with pytest.raises(CheckpointError):
        ck.load_model(tmp_path / "t")


def test_bit_flip(tmp_path):
    ck.save_model(tmp_path / "m", EncoderModel(CFG))
    blob = bytearray((tmp_path / "m").read_bytes())
    blob[len(blob) // 2] ^= 0x01
    (tmp_path / "m").write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="checksum"):
        ck.load_model(tmp_path / "m")


def test_version_mismatch():
    blob = bytearray(ck.to_bytes(ck.Checkpoint("encoder", {}, {})))
    struct.pack_into("<I", blob, 8, ck.FORMAT_VERSION + 1)
    with pytest.raises(CheckpointError, match="version"):
        ck.from_bytes(bytes(blob))


def test_bad_magic():
    blob = b"NOTACKPT" + ck.to_bytes(ck.Checkpoint("x", {}, {}))[8:]
    with pytest.raises(CheckpointError, match="magic"):
        ck.from_bytes(blob)


def test_kind_mismatch(tmp_path):
    ck.save_model(tmp_path / "m", EncoderModel(CFG))
    with pytest.raises(CheckpointError, match="expected 'ksm'"):
        ck.load_ksm(tmp_path / "m")


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        ck.read(tmp_path / "nope")


def test_atomic_write_leaves_no_temp(tmp_path):
    ck.save_model(tmp_path / "m", EncoderModel(CFG))
    assert [p.name for p in tmp_path.iterdir()] == ["m"]


@given(st.dictionaries(st.text("abc", min_size=1, max_size=4),
                       arrays(np.float64, array_shapes(min_dims=0, max_dims=3, max_side=3),
                              elements=st.floats(allow_nan=False)), max_size=4))
def test_container_round_trip(tensors):
    back = ck.from_bytes(ck.to_bytes(ck.Checkpoint("t", {"a": 1}, tensors, {"b": [1, 2]})))
    assert back.kind == "t" and back.config == {"a": 1} and back.extra == {"b": [1, 2]}
    assert list(back.tensors) == list(tensors)
    assert all(np.array_equal(back.tensors[k], v) and back.tensors[k].shape == v.shape for k, v in tensors.items())
