"""Transformer encoder classifiers used as teacher and student."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .data import EncodedSplit, TokenBatch
from .errors import ConfigError
from .nn import Linear, Module
from .rng import make_rng
from .tensor import Parameter, Tensor

NEG_INF = -1e9


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 4
    hidden_size: int = 64
    num_heads: int = 4
    vocab_size: int = 128
    max_seq_len: int = 16
    num_classes: int = 2
    dropout_rate: float = 0.1
    intermediate_size: int | None = None
    init_std: float = 0.02

    def __post_init__(self):
        for name in ("num_layers", "hidden_size", "num_heads", "vocab_size", "max_seq_len", "num_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.hidden_size % self.num_heads:
            raise ConfigError(f"hidden_size {self.hidden_size} is not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")

    @property
    def ffn_size(self) -> int:
        return self.intermediate_size or 4 * self.hidden_size

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class ModelOutput:
    logits: Tensor  # [batch, num_classes]
    cls_embeddings: list[Tensor]  # num_layers x [batch, hidden]

    @property
    def predicted_labels(self) -> np.ndarray:
        return self.logits.data.argmax(axis=-1)

    def detached(self) -> "ModelOutput":
        return ModelOutput(self.logits.detach(), [h.detach() for h in self.cls_embeddings])


class LayerNorm(Module):
    def __init__(self, size: int):
        self.gamma = Parameter(np.ones(size))
        self.beta = Parameter(np.zeros(size))

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta, eps=1e-12)


class EncoderBlock(Module):
    """Pre-norm block: x + Attn(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, cfg: EncoderConfig, rng):
        h, std = cfg.hidden_size, cfg.init_std
        self.num_heads = cfg.num_heads
        self.dropout_rate = cfg.dropout_rate
        self.ln1 = LayerNorm(h)
        self.qkv = Linear(h, 3 * h, rng, std=std)
        self.attn_out = Linear(h, h, rng, std=std)
        self.ln2 = LayerNorm(h)
        self.ffn_in = Linear(h, cfg.ffn_size, rng, std=std)
        self.ffn_out = Linear(cfg.ffn_size, h, rng, std=std)

    def __call__(self, x: Tensor, mask_bias: np.ndarray, rng) -> Tensor:
        b, t, h = x.shape
        a = self.num_heads
        d = h // a
        qkv = self.qkv(self.ln1(x)).reshape(b, t, 3, a, d).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = T.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(d)) + mask_bias
        attn = T.softmax(scores, axis=-1)
        attn = T.dropout(attn, self.dropout_rate, rng, self.training)
        ctx = T.matmul(attn, v).transpose(0, 2, 1, 3).reshape(b, t, h)
        x = x + T.dropout(self.attn_out(ctx), self.dropout_rate, rng, self.training)
        y = self.ffn_out(T.gelu(self.ffn_in(self.ln2(x))))
        return x + T.dropout(y, self.dropout_rate, rng, self.training)


class EncoderModel(Module):
    """Token + learned position embeddings, L pre-norm blocks, pooled CLS head.

    ``forward`` returns the logits and the CLS (position 0) vector after
    every block.
    """

    def __init__(self, cfg: EncoderConfig, seed: int = 0, zero_head: bool = False):
        self.config = cfg
        rng = make_rng(seed, "init")
        h, std = cfg.hidden_size, cfg.init_std
        self.tok_emb = Parameter(rng.normal(0.0, std, (cfg.vocab_size, h)))
        self.pos_emb = Parameter(rng.normal(0.0, std, (cfg.max_seq_len, h)))
        self.emb_ln = LayerNorm(h)
        self.blocks = [EncoderBlock(cfg, rng) for _ in range(cfg.num_layers)]
        self.final_ln = LayerNorm(h)
        self.pooler = Linear(h, h, rng, std=std)
        self.classifier = Linear(h, cfg.num_classes, None if zero_head else rng, std=std)

    def forward(self, batch: TokenBatch, train_mode: bool = False, rng: np.random.Generator | None = None) -> ModelOutput:
        cfg = self.config
        ids = np.asarray(batch.ids)
        if ids.ndim != 2:
            raise ValueError("token ids must be a [batch, seq] matrix")
        if ids.shape[1] > cfg.max_seq_len:
            raise ValueError(f"sequence length {ids.shape[1]} exceeds max_seq_len {cfg.max_seq_len}")
        if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
            raise ValueError("token id outside the vocabulary")
        self.train(train_mode)
        if train_mode and cfg.dropout_rate > 0 and rng is None:
            raise ValueError("train_mode forward with dropout needs an rng")
        b, t = ids.shape
        mask_bias = np.where(np.asarray(batch.mask, dtype=bool), 0.0, NEG_INF)[:, None, None, :]
        x = T.embedding(self.tok_emb, ids) + self.pos_emb[:t]
        x = T.dropout(self.emb_ln(x), cfg.dropout_rate, rng, train_mode)
        cls = []
        for block in self.blocks:
            x = block(x, mask_bias, rng)
            cls.append(x[:, 0, :])
        pooled = T.tanh(self.pooler(self.final_ln(cls[-1])))
        logits = self.classifier(T.dropout(pooled, cfg.dropout_rate, rng, train_mode))
        return ModelOutput(logits, cls)

    __call__ = forward

    def copy(self) -> "EncoderModel":
        clone = EncoderModel(self.config)
        clone.load_state_dict(self.state_dict())
        return clone


def init_student_from_teacher(teacher: EncoderModel, student_cfg: EncoderConfig) -> EncoderModel:
    """Student whose embeddings, bottom blocks and head are copied from ``teacher``."""
    tcfg = teacher.config
    if student_cfg.hidden_size != tcfg.hidden_size or student_cfg.num_heads != tcfg.num_heads:
        raise ConfigError("teacher-initialized student must share hidden_size and num_heads")
    if student_cfg.num_layers > tcfg.num_layers:
        raise ConfigError("student cannot have more layers than the teacher")
    if student_cfg.ffn_size != tcfg.ffn_size or student_cfg.vocab_size != tcfg.vocab_size:
        raise ConfigError("teacher-initialized student must share ffn and vocabulary sizes")
    if student_cfg.max_seq_len > tcfg.max_seq_len or student_cfg.num_classes != tcfg.num_classes:
        raise ConfigError("student sequence length / class count incompatible with teacher")
    student = EncoderModel(student_cfg)
    tstate = teacher.state_dict()
    state = {}
    for name in student.state_dict():
        src = tstate[name]
        if name == "pos_emb":
            src = src[: student_cfg.max_seq_len]
        state[name] = src
    student.load_state_dict(state)
    return student


# ---------------------------------------------------------------------------
# layer maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerMap:
    """1-based student-layer -> teacher-layer assignment."""

    student_layers: int
    teacher_layers: int
    mapping: tuple[int, ...]

    def __post_init__(self):
        if len(self.mapping) != self.student_layers:
            raise ConfigError("mapping length must equal student layer count")
        if any(b <= a for a, b in zip(self.mapping, self.mapping[1:])):
            raise ConfigError("layer map must be strictly increasing")
        if self.mapping and self.mapping[-1] != self.teacher_layers:
            raise ConfigError("last student layer must map to the last teacher layer")
        if self.mapping and self.mapping[0] < 1:
            raise ConfigError("teacher layer indices are 1-based")

    def __call__(self, i: int) -> int:
        return self.mapping[i - 1]

    def as_dict(self) -> dict[int, int]:
        return {i + 1: t for i, t in enumerate(self.mapping)}


def skip_layer_map(student_layers: int, teacher_layers: int, rounding: str = "floor") -> LayerMap:
    """PKD-Skip assignment ``I(i) = round(i * L_T / L_S)``.

    Reduces to ``i * L_T / L_S`` when the layer counts divide.  Otherwise
    ``rounding`` picks floor or ceiling; both are strictly increasing and end
    at ``L_T`` because ``L_T / L_S >= 1``.
    """
    if student_layers < 1 or teacher_layers < 1:
        raise ConfigError("layer counts must be positive")
    if student_layers > teacher_layers:
        raise ConfigError(f"student has more layers ({student_layers}) than teacher ({teacher_layers})")
    if rounding not in ("floor", "ceil"):
        raise ConfigError("rounding must be 'floor' or 'ceil'")
    # integer arithmetic avoids float rounding on exact multiples
    if rounding == "floor":
        mapping = tuple(i * teacher_layers // student_layers for i in range(1, student_layers + 1))
    else:
        mapping = tuple(-(-i * teacher_layers // student_layers) for i in range(1, student_layers + 1))
    return LayerMap(student_layers, teacher_layers, mapping)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Metrics:
    loss: float
    accuracy: float
    f1: float

    def get(self, name: str) -> float:
        if name not in ("loss", "accuracy", "f1"):
            raise KeyError(name)
        return getattr(self, name)


def macro_f1(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int) -> float:
    scores = []
    for c in range(num_classes):
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        denom = 2 * tp + fp + fn
        scores.append(0.0 if denom == 0 else 2 * tp / denom)
    return float(np.mean(scores))


def metrics_from_logits(logits: np.ndarray, labels: np.ndarray, num_classes: int | None = None) -> Metrics:
    if len(labels) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    num_classes = num_classes or logits.shape[1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(len(labels)), labels].mean())
    pred = logits.argmax(axis=1)
    return Metrics(loss, float(np.mean(pred == labels)), macro_f1(labels, pred, num_classes))


def predict_logits(model: EncoderModel, split: EncodedSplit | TokenBatch, batch_size: int = 256) -> np.ndarray:
    ids, mask = split.ids, split.mask
    out = []
    with T.no_grad():
        for start in range(0, len(ids), batch_size):
            sl = slice(start, start + batch_size)
            out.append(model.forward(TokenBatch(ids[sl], mask[sl]), train_mode=False).logits.data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, model.config.num_classes))


def evaluate(model: EncoderModel, dataset: EncodedSplit, batch_size: int = 256) -> Metrics:
    """Mean cross-entropy, accuracy and macro-F1 in eval mode."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    logits = predict_logits(model, dataset, batch_size)
    return metrics_from_logits(logits, dataset.labels, model.config.num_classes)
