"""The four knowledge losses and their soft / hard combinations.

Knowledge order everywhere is (fin, res, fea, rel): ground-truth finetuning,
logit response matching, per-layer CLS feature matching, and inter-layer
relation matching through FSP matrices.  Every loss is averaged over the
batch rather than summed, so combination weights do not depend on batch size.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .models import LayerMap
from .tensor import DimensionError, Tensor

KNOWLEDGE_TYPES = ("fin", "res", "fea", "rel")
FEAK_EPS = 1e-12


@dataclass(frozen=True)
class DistillConfig:
    temperature: float = 1.0
    kl_teacher_first: bool = False
    fsp_norm_divisor: str = "dim"  # "dim" divides by H, "norm" by the Euclidean norm of h1
    layer_rounding: str = "floor"  # student-to-teacher layer map when L_T / L_S is fractional

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.fsp_norm_divisor not in ("dim", "norm"):
            raise ConfigError("fsp_norm_divisor must be 'dim' or 'norm'")
        if self.layer_rounding not in ("floor", "ceil"):
            raise ConfigError("layer_rounding must be 'floor' or 'ceil'")


@dataclass
class KnowledgeLossVector:
    fin: Tensor
    res: Tensor
    fea: Tensor
    rel: Tensor

    def __iter__(self):
        return iter((self.fin, self.res, self.fea, self.rel))

    def values(self) -> np.ndarray:
        return np.array([t.item() for t in self])


def _labels(labels, num_classes: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ValueError(f"label outside [0, {num_classes})")
    return y


def loss_fink(student_logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy against the ground-truth labels."""
    logits = T._as_tensor(student_logits)
    y = _labels(labels, logits.shape[1])
    logp = T.log_softmax(logits, axis=-1)
    return -logp[np.arange(len(y)), y].mean()


def loss_resk(student_logits: Tensor, teacher_logits: Tensor, temperature: float = 1.0, teacher_first: bool = False) -> Tensor:
    """KL divergence between temperature-softened distributions, batch-averaged.

    The default order is KL(student || teacher); ``teacher_first`` gives the
    classical KL(teacher || student).
    """
    s = T._as_tensor(student_logits)
    t = T._as_tensor(teacher_logits).detach()
    if s.shape != t.shape:
        raise DimensionError(f"logit shapes differ: {s.shape} vs {t.shape}")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    log_ps = T.log_softmax(s * (1.0 / temperature), axis=-1)
    log_pt = T.log_softmax(t * (1.0 / temperature), axis=-1)
    if teacher_first:
        pt = np.exp(log_pt.data)
        kl = (pt * (log_pt.data - log_ps)).sum(axis=-1)
    else:
        ps = T.exp(log_ps)
        kl = (ps * (log_ps - log_pt)).sum(axis=-1)
    return kl.mean()


def _unit(h: Tensor) -> Tensor:
    return h / T.l2_norm(h, axis=-1, keepdims=True, eps=FEAK_EPS)


def loss_feak(student_cls: list[Tensor], teacher_cls: list[Tensor], layer_map: LayerMap) -> Tensor:
    """Distance between unit-normalized student CLS vectors and their mapped teacher layers."""
    if len(student_cls) != layer_map.student_layers or len(teacher_cls) != layer_map.teacher_layers:
        raise ConfigError("layer counts do not match the layer map")
    total = None
    for i, hs in enumerate(student_cls, start=1):
        ht = teacher_cls[layer_map(i) - 1].detach()
        if hs.shape != ht.shape:
            raise DimensionError(f"CLS shapes differ at layer {i}: {hs.shape} vs {ht.shape}")
        dist = T.l2_norm(_unit(hs) - _unit(ht), axis=-1)
        total = dist if total is None else total + dist
    return total.mean()


def fsp_matrix(h1, h2, divisor: str = "dim") -> Tensor:
    """Outer product ``h1 h2^T`` divided by the size of ``h1``.

    Accepts single vectors ``[H]`` or batches ``[B, H]``.  ``divisor`` picks
    the size measure: ``"dim"`` is the dimension H, ``"norm"`` the Euclidean
    norm of ``h1`` (zero vectors map to a zero matrix).
    """
    h1, h2 = T._as_tensor(h1), T._as_tensor(h2)
    if h1.shape != h2.shape:
        raise DimensionError(f"FSP operands differ in shape: {h1.shape} vs {h2.shape}")
    outer = T.matmul(h1.reshape(h1.shape + (1,)), h2.reshape(h2.shape[:-1] + (1, h2.shape[-1])))
    if divisor == "dim":
        return outer * (1.0 / h1.shape[-1])
    if divisor == "norm":
        norm = T.l2_norm(h1, axis=-1, keepdims=True, eps=FEAK_EPS)
        return outer / norm.reshape(norm.shape + (1,))
    raise ValueError(f"unknown FSP divisor {divisor!r}")


def loss_relk(student_cls: list[Tensor], teacher_cls: list[Tensor], layer_map: LayerMap, divisor: str = "dim") -> Tensor:
    """MSE between student and teacher FSP matrices of consecutive mapped layers.

    Both sides use the same sample; batch-averaged.
    """
    ls = layer_map.student_layers
    if ls < 2:
        raise ConfigError("relation knowledge needs at least two student layers")
    if len(student_cls) != ls or len(teacher_cls) != layer_map.teacher_layers:
        raise ConfigError("layer counts do not match the layer map")
    total = None
    for i in range(1, ls):
        gs = fsp_matrix(student_cls[i - 1], student_cls[i], divisor)
        with T.no_grad():
            gt = fsp_matrix(teacher_cls[layer_map(i) - 1], teacher_cls[layer_map(i + 1) - 1], divisor)
        if gs.shape != gt.shape:
            raise DimensionError("student and teacher hidden sizes differ; FSP matrices are incomparable")
        diff = gs - gt
        mse = (diff * diff).mean(axis=(-2, -1))
        total = mse if total is None else total + mse
    return total.mean()


def knowledge_losses(student_out, teacher_out, labels, layer_map: LayerMap, cfg: DistillConfig = DistillConfig()) -> KnowledgeLossVector:
    """All four losses for one batch; RelK is a constant zero for one-layer students."""
    fin = loss_fink(student_out.logits, labels)
    res = loss_resk(student_out.logits, teacher_out.logits, cfg.temperature, cfg.kl_teacher_first)
    fea = loss_feak(student_out.cls_embeddings, teacher_out.cls_embeddings, layer_map)
    if layer_map.student_layers >= 2:
        rel = loss_relk(student_out.cls_embeddings, teacher_out.cls_embeddings, layer_map, cfg.fsp_norm_divisor)
    else:
        rel = T.tensor(0.0)
    return KnowledgeLossVector(fin, res, fea, rel)


def _check_action(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    if a.shape != (4,):
        raise ValueError("an action has exactly four components")
    return a


def combine_soft(losses: KnowledgeLossVector, action) -> Tensor:
    """Weighted sum ``sum_m a_m * L_m``."""
    a = _check_action(action)
    total = None
    for w, loss in zip(a, losses):
        term = loss * float(w)
        total = term if total is None else total + term
    return total


def harden(action, threshold: float) -> np.ndarray:
    """Binary gates ``a_m >= threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    return (_check_action(action) >= threshold).astype(np.float64)


def combine_hard(losses: KnowledgeLossVector, action, threshold: float) -> Tensor:
    """Sum of the losses whose action component reaches ``threshold``."""
    return combine_soft(losses, harden(action, threshold))
