"""scikit-learn compatible estimators over raw text.

``EncoderClassifier`` trains a transformer encoder on the ground-truth loss.
``KnowledgeDistiller`` compresses a fitted teacher into a shallower student
using one of the knowledge selection strategies.  Both accept a sequence of
strings as ``X`` and arbitrary hashable class labels as ``y``.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.model_selection import train_test_split
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_consistent_length, check_is_fitted, column_or_1d

from . import tensor as T
from .data import EncodedSplit, TextExample, Vocabulary, encode
from .engine import (
    TeacherCache,
    TrainConfig,
    distill,
    make_student,
    run_fixed,
    run_random,
    train_ksm,
    train_teacher,
)
from .errors import ConfigError
from .ksm import KsmConfig
from .losses import DistillConfig
from .models import EncoderConfig, EncoderModel, predict_logits

STRATEGIES = ("ksm_soft", "ksm_hard", "fixed", "random_all", "random_one")


def check_texts(X) -> np.ndarray:
    """1-D object array of nonempty strings."""
    if isinstance(X, str):
        raise ValueError("expected a sequence of strings, got a single string")
    arr = column_or_1d(np.asarray(X, dtype=object), warn=True)
    for i, x in enumerate(arr):
        if not isinstance(x, str) or not x.strip():
            raise ValueError(f"X[{i}] is not a nonempty string")
    return arr


def check_text_targets(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = check_texts(X)
    y = column_or_1d(np.asarray(y), warn=True)
    check_consistent_length(X, y)
    check_classification_targets(y)
    return X, y


def _split(texts, labels, vocab: Vocabulary, max_seq_len: int) -> EncodedSplit:
    labels = np.zeros(len(texts), dtype=np.int64) if labels is None else labels
    return encode([TextExample(t, int(c)) for t, c in zip(texts, labels)], vocab, max_seq_len)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class _EncoderPredictMixin:
    """Prediction surface shared by estimators that hold ``model_``, ``vocab_`` and ``classes_``."""

    def _encoded(self, X) -> EncodedSplit:
        check_is_fitted(self, "model_")
        return _split(check_texts(X), None, self.vocab_, self.model_.config.max_seq_len)

    def decision_function(self, X) -> np.ndarray:
        return predict_logits(self.model_, self._encoded(X))

    def predict_proba(self, X) -> np.ndarray:
        return _softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "classes_")
        return self.classes_[self.decision_function(X).argmax(axis=1)]

    def transform(self, X) -> np.ndarray:
        """Last-layer CLS embeddings, ``[n_samples, hidden_size]``."""
        split = self._encoded(X)
        out = []
        with T.no_grad():
            for start in range(0, len(split), 256):
                res = self.model_.forward(split.take(slice(start, start + 256)), train_mode=False)
                out.append(res.cls_embeddings[-1].data)
        return np.concatenate(out) if out else np.zeros((0, self.model_.config.hidden_size))


class EncoderClassifier(_EncoderPredictMixin, ClassifierMixin, TransformerMixin, BaseEstimator):
    def __init__(self, num_layers=4, hidden_size=64, num_heads=4, intermediate_size=None, max_seq_len=16,
                 dropout_rate=0.1, epochs=5, batch_size=32, learning_rate=1e-3, random_state=0):
        self.num_layers = num_layers
        self.hidden_size = hidden_size
        self.num_heads = num_heads
        self.intermediate_size = intermediate_size
        self.max_seq_len = max_seq_len
        self.dropout_rate = dropout_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_text_targets(X, y)
        if len(X) < self.batch_size:
            raise ValueError(f"need at least batch_size={self.batch_size} samples, got {len(X)}")
        self.label_encoder_ = LabelEncoder().fit(y)
        self.classes_ = self.label_encoder_.classes_
        codes = self.label_encoder_.transform(y)
        self.vocab_ = Vocabulary.build([TextExample(t, 0) for t in X])
        cfg = EncoderConfig(num_layers=self.num_layers, hidden_size=self.hidden_size, num_heads=self.num_heads,
                            vocab_size=len(self.vocab_), max_seq_len=self.max_seq_len, num_classes=max(2, len(self.classes_)),
                            dropout_rate=self.dropout_rate, intermediate_size=self.intermediate_size)
        train = _split(X, codes, self.vocab_, self.max_seq_len)
        tcfg = TrainConfig(batch_size=self.batch_size, teacher_lr=self.learning_rate, teacher_epochs=self.epochs,
                           eval_every_epoch=False)
        seed = int(self.random_state or 0)
        self.model_, self.history_ = _fit_encoder(cfg, train, tcfg, seed)
        self.n_features_in_ = 1
        return self


def _fit_encoder(cfg: EncoderConfig, train: EncodedSplit, tcfg: TrainConfig, seed: int):
    # the training split doubles as the per-epoch monitor
    return train_teacher(cfg, train, train, tcfg, seed)


class KnowledgeDistiller(_EncoderPredictMixin, ClassifierMixin, TransformerMixin, BaseEstimator):
    """Distil ``teacher`` (a fitted ``EncoderClassifier``) into a ``student_layers``-layer student.

    The dev set that provides KSM rewards is ``X_dev``/``y_dev`` when given to
    ``fit``, otherwise a stratified ``validation_fraction`` of the data.
    """

    def __init__(self, teacher=None, student_layers=2, strategy="ksm_soft", fixed_weights=(1.0, 1.0, 1.0, 1.0),
                 epochs=3, batch_size=32, learning_rate=1e-3, threshold=0.2, phase_size=32, scale=0.1, discount=0.98,
                 episodes=10, ksm_optimizer="adam", temperature=1.0, validation_fraction=0.2, random_state=0):
        self.teacher = teacher
        self.student_layers = student_layers
        self.strategy = strategy
        self.fixed_weights = fixed_weights
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.threshold = threshold
        self.phase_size = phase_size
        self.scale = scale
        self.discount = discount
        self.episodes = episodes
        self.ksm_optimizer = ksm_optimizer
        self.temperature = temperature
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def fit(self, X, y, X_dev=None, y_dev=None):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not isinstance(self.teacher, EncoderClassifier):
            raise TypeError("teacher must be an EncoderClassifier")
        check_is_fitted(self.teacher, "model_")
        X, y = check_text_targets(X, y)
        seed = int(self.random_state or 0)
        if X_dev is None:
            X, X_dev, y, y_dev = train_test_split(X, y, test_size=self.validation_fraction, random_state=seed,
                                                  stratify=y)
        else:
            X_dev, y_dev = check_text_targets(X_dev, y_dev)
        teacher_model: EncoderModel = self.teacher.model_
        self.classes_ = self.teacher.classes_
        self.vocab_ = self.teacher.vocab_
        unknown = set(np.unique(np.concatenate([y, y_dev]))) - set(self.classes_)
        if unknown:
            raise ValueError(f"labels unseen by the teacher: {sorted(unknown)[:5]}")
        n = teacher_model.config.max_seq_len
        train = _split(X, self.teacher.label_encoder_.transform(y), self.vocab_, n)
        dev = _split(X_dev, self.teacher.label_encoder_.transform(y_dev), self.vocab_, n)

        scfg = replace(teacher_model.config, num_layers=self.student_layers)
        tcfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size, student_lr=self.learning_rate,
                           eval_every_epoch=False)
        dcfg = DistillConfig(temperature=self.temperature)
        cache = TeacherCache(teacher_model, train)
        student0 = make_student(teacher_model, scfg, tcfg, seed)
        self.ksm_ = None
        if self.strategy.startswith("ksm"):
            mode = self.strategy.split("_")[1]
            kcfg = KsmConfig(threshold=self.threshold, phase_size=self.phase_size, scale=self.scale,
                             discount=self.discount, episodes=self.episodes, action_mode=mode,
                             optimizer=self.ksm_optimizer)
            result = train_ksm(teacher_model, student0, train, dev, kcfg, tcfg, dcfg, seed, teacher_cache=cache)
            self.ksm_ = result.ksm
            self.ksm_result_ = result
            self.model_, self.run_ = distill(teacher_model, student0, result.ksm, train, mode, tcfg, dcfg, seed,
                                             dev, teacher_cache=cache)
        elif self.strategy == "fixed":
            self.model_, self.run_ = run_fixed(teacher_model, student0, train, self.fixed_weights, tcfg, dcfg, seed,
                                               dev, teacher_cache=cache)
        else:
            kept = {}
            summary = run_random(teacher_model, student0, train, dev, self.strategy.split("_")[1], "soft", 1, tcfg,
                                 dcfg, seed, teacher_cache=cache, on_run=lambda m, r: kept.update(model=m))
            self.model_, self.run_ = kept["model"], summary.runs[0]
        self.n_features_in_ = 1
        return self
