"""Tiny task and models shared by the engine, pipeline and CLI tests."""
from functools import lru_cache

from ksmkd.data import TaskSpec, make_synthetic
from ksmkd.engine import TrainConfig, make_student, train_teacher
from ksmkd.models import EncoderConfig

TINY_TASK = TaskSpec(num_classes=2, n_train=160, n_dev=40, n_test=40, noise=0.0, min_len=4, max_len=8,
                     markers_per_class=3, max_marker_count=2, filler_vocab=20)
SEQ = 10


def encoder(layers, vocab_size, num_classes=2, hidden=8):
    return EncoderConfig(num_layers=layers, hidden_size=hidden, num_heads=2, vocab_size=vocab_size,
                         max_seq_len=SEQ, num_classes=num_classes, intermediate_size=16)


@lru_cache(maxsize=None)
def world(seed=0):
    """(train, dev, test, teacher, student_init, train_cfg) on the tiny task."""
    ds = make_synthetic(TINY_TASK, seed)
    train, dev, test = ds.encoded(SEQ)
    tcfg = TrainConfig(epochs=1, batch_size=16, teacher_epochs=2, eval_every_epoch=True)
    teacher, _ = train_teacher(encoder(4, len(ds.vocab)), train, dev, tcfg, seed)
    student = make_student(teacher, encoder(2, len(ds.vocab)), tcfg, seed)
    return train, dev, test, teacher, student, tcfg
