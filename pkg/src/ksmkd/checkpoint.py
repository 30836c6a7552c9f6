"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes  b"KSMKDCKP"
    version    uint32
    hlen       uint64   length of the JSON header
    header     hlen bytes of UTF-8 JSON (sorted keys): kind, config, tensors
               [{name, shape}], extra
    payload    every tensor as float64 little-endian, in header order
    trailer    32-byte SHA-256 of everything above

Writing the same parameters and metadata twice yields identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Vocabulary
from .errors import CheckpointError
from .ksm import KnowledgeSelectionModule, KsmConfig
from .models import EncoderConfig, EncoderModel

MAGIC = b"KSMKDCKP"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DIGEST = 32


@dataclass
class Checkpoint:
    kind: str
    config: dict
    tensors: dict[str, np.ndarray]
    extra: dict = field(default_factory=dict)


def to_bytes(ckpt: Checkpoint) -> bytes:
    names = list(ckpt.tensors)
    arrays = [np.asarray(ckpt.tensors[n], dtype="<f8", order="C") for n in names]  # keeps 0-d shapes
    header = {
        "kind": ckpt.kind,
        "config": ckpt.config,
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in zip(names, arrays)],
        "extra": ckpt.extra,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join([_PREFIX.pack(MAGIC, FORMAT_VERSION, len(hbytes)), hbytes] + [a.tobytes() for a in arrays])
    return body + hashlib.sha256(body).digest()


def from_bytes(blob: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(blob) < _PREFIX.size + _DIGEST:
        raise CheckpointError(f"{source}: file too short to be a checkpoint (truncated?)")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint file (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{source}: checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{source}: checksum mismatch; file is truncated or corrupt")
    start = _PREFIX.size
    try:
        header = json.loads(body[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: unreadable header ({exc})") from None
    offset = start + hlen
    tensors = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(body):
            raise CheckpointError(f"{source}: payload shorter than the header declares")
        tensors[spec["name"]] = np.frombuffer(body, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(body):
        raise CheckpointError(f"{source}: {len(body) - offset} unexpected trailing payload bytes")
    return Checkpoint(header["kind"], header["config"], tensors, header.get("extra", {}))


def write(path, ckpt: Checkpoint) -> Path:
    """Atomic write: the target is either the old file or the complete new one."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    os.replace(tmp, path)
    return path


def read(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    return from_bytes(path.read_bytes(), str(path))


def _expect(ckpt: Checkpoint, kind: str, path) -> None:
    if ckpt.kind != kind:
        raise CheckpointError(f"{path}: holds a {ckpt.kind!r} checkpoint, expected {kind!r}")


# ---------------------------------------------------------------------------
# typed helpers
# ---------------------------------------------------------------------------

def save_model(path, model: EncoderModel, vocab: Vocabulary | None = None, extra: dict | None = None) -> Path:
    meta = dict(extra or {})
    if vocab is not None:
        meta["vocab"] = vocab.tokens
    return write(path, Checkpoint("encoder", model.config.to_dict(), model.state_dict(), meta))


def load_model(path) -> tuple[EncoderModel, Vocabulary | None, dict]:
    ckpt = read(path)
    _expect(ckpt, "encoder", path)
    model = EncoderModel(EncoderConfig.from_dict(ckpt.config))
    try:
        model.load_state_dict(ckpt.tensors)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: parameters do not fit the stored config ({exc})") from None
    extra = dict(ckpt.extra)
    tokens = extra.pop("vocab", None)
    return model, (Vocabulary(tokens) if tokens is not None else None), extra


def save_ksm(path, ksm: KnowledgeSelectionModule, extra: dict | None = None) -> Path:
    config = {
        "ksm": ksm.config.to_dict(),
        "cls_size": ksm.cls_size,
        "teacher_cls_size": ksm.teacher_cls_size,
        "batch_size": ksm.batch_size,
    }
    return write(path, Checkpoint("ksm", config, ksm.state_dict(), dict(extra or {})))


def load_ksm(path) -> tuple[KnowledgeSelectionModule, dict]:
    ckpt = read(path)
    _expect(ckpt, "ksm", path)
    c = ckpt.config
    ksm = KnowledgeSelectionModule(c["cls_size"], c["batch_size"], KsmConfig.from_dict(c["ksm"]),
                                   teacher_cls_size=c["teacher_cls_size"])
    try:
        ksm.load_state_dict(ckpt.tensors)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: parameters do not fit the stored config ({exc})") from None
    return ksm, dict(ckpt.extra)
