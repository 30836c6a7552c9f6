"""Datasets: TSV loading, word-level tokenization, batching, synthetic tasks."""
from __future__ import annotations

import csv
import hashlib
import json
import re
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError
from .rng import make_rng

PAD, CLS, UNK, SEP = "[PAD]", "[CLS]", "[UNK]", "[SEP]"
SPECIALS = (PAD, CLS, UNK, SEP)
PAD_ID, CLS_ID, UNK_ID, SEP_ID = 0, 1, 2, 3

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class TsvFormatError(ValueError):
    """A TSV row is malformed or a declared column is missing."""


class LabelError(ValueError):
    """A label string is not in the declared label set."""


@dataclass(frozen=True)
class TextExample:
    text_a: str
    label: int
    text_b: str | None = None

    def __post_init__(self):
        if not self.text_a:
            raise ValueError("text_a must be nonempty")


@dataclass
class Vocabulary:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[: len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the special tokens")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    @classmethod
    def build(cls, examples: Sequence[TextExample], min_freq: int = 1, max_size: int | None = None) -> "Vocabulary":
        counts: Counter[str] = Counter()
        for ex in examples:
            counts.update(split_words(ex.text_a))
            if ex.text_b:
                counts.update(split_words(ex.text_b))
        # frequency first, then alphabetical, so the result is order-independent
        ranked = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
        if max_size is not None:
            ranked = ranked[: max(0, max_size - len(SPECIALS))]
        return cls(list(SPECIALS) + ranked)

    def to_json(self) -> str:
        return json.dumps(self.tokens)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        return cls(json.loads(text))


def split_words(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def tokenize(text: str, vocab: Vocabulary, max_seq_len: int, text_b: str | None = None) -> list[int]:
    """Lowercased word/punctuation ids prefixed with CLS, truncated to ``max_seq_len``."""
    ids = [CLS_ID] + [vocab.id(t) for t in split_words(text)]
    if text_b is not None:
        ids += [SEP_ID] + [vocab.id(t) for t in split_words(text_b)]
    return ids[:max_seq_len]


def detokenize(ids: Sequence[int], vocab: Vocabulary) -> str:
    return " ".join(vocab.tokens[i] for i in ids if i not in (PAD_ID, CLS_ID, SEP_ID))


@dataclass
class TokenBatch:
    ids: np.ndarray  # [batch, seq] int64, CLS at column 0
    mask: np.ndarray  # [batch, seq] bool, True on real tokens
    labels: np.ndarray | None = None

    def __len__(self) -> int:
        return self.ids.shape[0]


@dataclass
class EncodedSplit:
    """A split tokenized into a fixed-width id matrix."""

    ids: np.ndarray
    mask: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.ids.shape[0]

    def take(self, index, trim: bool = True) -> TokenBatch:
        """Rows ``index``; with ``trim``, padding columns beyond the longest row are dropped."""
        ids, mask = self.ids[index], self.mask[index]
        if trim and ids.shape[0]:
            width = max(1, int(mask.sum(axis=1).max()))
            ids, mask = ids[:, :width], mask[:, :width]
        return TokenBatch(ids, mask, self.labels[index])

    def subset(self, n: int | None) -> "EncodedSplit":
        if n is None or n >= len(self):
            return self
        return EncodedSplit(self.ids[:n], self.mask[:n], self.labels[:n])

    def as_batch(self) -> TokenBatch:
        return TokenBatch(self.ids, self.mask, self.labels)


def encode(examples: Sequence[TextExample], vocab: Vocabulary, max_seq_len: int) -> EncodedSplit:
    ids = np.full((len(examples), max_seq_len), PAD_ID, dtype=np.int64)
    for row, ex in enumerate(examples):
        seq = tokenize(ex.text_a, vocab, max_seq_len, ex.text_b)
        ids[row, : len(seq)] = seq
    labels = np.array([ex.label for ex in examples], dtype=np.int64)
    return EncodedSplit(ids, ids != PAD_ID, labels)


@dataclass
class DatasetSplits:
    train: list[TextExample]
    dev: list[TextExample]
    test: list[TextExample]
    vocab: Vocabulary
    num_classes: int

    def encoded(self, max_seq_len: int) -> tuple[EncodedSplit, EncodedSplit, EncodedSplit]:
        return tuple(encode(s, self.vocab, max_seq_len) for s in (self.train, self.dev, self.test))

    def check_disjoint(self) -> None:
        hashes = [{example_hash(e) for e in s} for s in (self.train, self.dev, self.test)]
        if hashes[0] & hashes[1] or hashes[0] & hashes[2] or hashes[1] & hashes[2]:
            raise ValueError("splits overlap")


def example_hash(ex: TextExample) -> str:
    return hashlib.sha256(f"{ex.text_a}\t{ex.text_b or ''}".encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# TSV
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TsvSchema:
    text_a: str = "text_a"
    label: str = "label"
    text_b: str | None = None
    label_names: tuple[str, ...] | None = None


def load_tsv(path, schema: TsvSchema = TsvSchema()) -> list[TextExample]:
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        try:
            header = next(reader)
        except StopIteration:
            raise TsvFormatError(f"{path}: empty file (header expected)") from None
        columns = {name: i for i, name in enumerate(header)}
        wanted = [schema.text_a, schema.label] + ([schema.text_b] if schema.text_b else [])
        for name in wanted:
            if name not in columns:
                raise TsvFormatError(f"{path}: missing column {name!r} in header")
        label_map = {n: i for i, n in enumerate(schema.label_names)} if schema.label_names else None
        examples, bad = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c for c in row):
                continue
            if len(row) != len(header):
                bad.append(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
                continue
            text_a = row[columns[schema.text_a]]
            if not text_a:
                bad.append(f"line {lineno}: empty {schema.text_a!r}")
                continue
            raw = row[columns[schema.label]]
            if label_map is not None:
                if raw not in label_map:
                    raise LabelError(f"{path}: line {lineno}: unknown label {raw!r}")
                label = label_map[raw]
            else:
                try:
                    label = int(raw)
                except ValueError:
                    raise LabelError(f"{path}: line {lineno}: label {raw!r} is not an integer") from None
            text_b = row[columns[schema.text_b]] if schema.text_b else None
            examples.append(TextExample(text_a, label, text_b))
        if bad:
            raise TsvFormatError(f"{path}: malformed rows: " + "; ".join(bad))
    return examples


def write_tsv(path, examples: Sequence[TextExample]) -> None:
    pair = any(ex.text_b is not None for ex in examples)
    lines = ["text_a\ttext_b\tlabel" if pair else "text_a\tlabel"]
    for ex in examples:
        if pair:
            lines.append(f"{ex.text_a}\t{ex.text_b or ''}\t{ex.label}")
        else:
            lines.append(f"{ex.text_a}\t{ex.label}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# synthetic task
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TaskSpec:
    """Marker-counting classification.

    Each class owns ``markers_per_class`` marker words.  A sentence holds
    filler words plus markers from several classes; its clean label is the
    class whose markers occur most often (strict maximum).  With probability
    ``noise`` the label is replaced by a different class chosen uniformly, so
    the Bayes-optimal accuracy is ``1 - noise``.
    """

    num_classes: int = 2
    n_train: int = 2000
    n_dev: int = 500
    n_test: int = 500
    noise: float = 0.1
    min_len: int = 6
    max_len: int = 12
    markers_per_class: int = 4
    max_marker_count: int = 3
    filler_vocab: int = 60

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        if min(self.n_train, self.n_dev, self.n_test) < 1:
            raise ConfigError("every split needs at least one example")
        if not 0.0 <= self.noise < 1.0 - 1.0 / self.num_classes:
            raise ConfigError(f"noise must lie in [0, 1 - 1/num_classes), got {self.noise}")
        if self.max_marker_count < 1 or self.markers_per_class < 1:
            raise ConfigError("marker counts must be positive")
        worst = self.max_marker_count + (self.num_classes - 1) * (self.max_marker_count - 1)
        if self.max_len < worst or self.min_len < 1 or self.min_len > self.max_len:
            raise ConfigError(f"length range [{self.min_len}, {self.max_len}] cannot hold {worst} markers")
        if self.filler_vocab < 1:
            raise ConfigError("filler_vocab must be positive")
        if self.n_train + self.n_dev + self.n_test > 0.5 * self.capacity():
            raise ConfigError("too many examples requested for the sentence space")

    def capacity(self) -> float:
        return float(self.filler_vocab) ** self.min_len

    def to_dict(self) -> dict:
        return asdict(self)


def _synth_sentence(spec: TaskSpec, rng: np.random.Generator) -> tuple[str, int]:
    c = spec.num_classes
    label = int(rng.integers(c))
    top = int(rng.integers(1, spec.max_marker_count + 1))
    counts = [int(rng.integers(0, top)) for _ in range(c)]
    counts[label] = top
    words = []
    for cls_idx, n in enumerate(counts):
        words += [f"m{cls_idx}x{int(rng.integers(spec.markers_per_class))}" for _ in range(n)]
    length = max(len(words), int(rng.integers(spec.min_len, spec.max_len + 1)))
    words += [f"w{int(rng.integers(spec.filler_vocab))}" for _ in range(length - len(words))]
    order = rng.permutation(len(words))
    return " ".join(words[i] for i in order), label


def make_synthetic(spec: TaskSpec, seed: int) -> DatasetSplits:
    spec.validate()
    rng = make_rng(seed, "synthetic")
    noise_rng = make_rng(seed, "synthetic-noise")
    seen: set[str] = set()
    splits = []
    for n in (spec.n_train, spec.n_dev, spec.n_test):
        out = []
        while len(out) < n:
            text, label = _synth_sentence(spec, rng)
            if text in seen:
                continue
            seen.add(text)
            if noise_rng.random() < spec.noise:
                label = (label + 1 + int(noise_rng.integers(spec.num_classes - 1))) % spec.num_classes
            out.append(TextExample(text, label))
        splits.append(out)
    vocab = Vocabulary.build(splits[0])
    ds = DatasetSplits(splits[0], splits[1], splits[2], vocab, spec.num_classes)
    ds.check_disjoint()
    return ds


def write_splits(ds: DatasetSplits, out_dir, spec: TaskSpec | None = None, seed: int | None = None) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in ("train", "dev", "test"):
        paths[name] = out / f"{name}.tsv"
        write_tsv(paths[name], getattr(ds, name))
    meta = {"format_version": 1, "num_classes": ds.num_classes}
    if spec is not None:
        meta["task_spec"] = spec.to_dict()
    if seed is not None:
        meta["seed"] = seed
    paths["meta"] = out / "task.json"
    paths["meta"].write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return paths


def load_splits(data_dir, schema: TsvSchema = TsvSchema(), num_classes: int | None = None) -> DatasetSplits:
    data_dir = Path(data_dir)
    train = load_tsv(data_dir / "train.tsv", schema)
    dev = load_tsv(data_dir / "dev.tsv", schema)
    test_path = data_dir / "test.tsv"
    test = load_tsv(test_path, schema) if test_path.exists() else []
    if num_classes is None:
        meta = data_dir / "task.json"
        if meta.exists():
            num_classes = json.loads(meta.read_text())["num_classes"]
        elif schema.label_names:
            num_classes = len(schema.label_names)
        else:
            num_classes = 1 + max(ex.label for ex in train + dev + test)
    for ex in train + dev + test:
        if not 0 <= ex.label < num_classes:
            raise LabelError(f"label {ex.label} outside [0, {num_classes})")
    return DatasetSplits(train, dev, test, Vocabulary.build(train), num_classes)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def epoch_order(n: int, batch_size: int, seed: int, epoch: int, shuffle: bool = True, drop_last: bool = True) -> list[np.ndarray]:
    """Index arrays for one epoch; the permutation depends only on (seed, epoch)."""
    if n <= 0:
        raise ValueError("cannot batch an empty split")
    if batch_size <= 0:
        raise ValueError("batch_size must be positive")
    order = make_rng(seed, "shuffle", epoch).permutation(n) if shuffle else np.arange(n)
    stop = (n // batch_size) * batch_size if drop_last else n
    if drop_last and stop == 0:
        warnings.warn(f"batch_size {batch_size} exceeds split size {n}; drop_last yields no batches", stacklevel=2)
    return [order[i : i + batch_size] for i in range(0, stop, batch_size)]


def batches(split: EncodedSplit, batch_size: int, shuffle_seed: int, drop_last: bool = True, epoch: int = 0) -> Iterator[TokenBatch]:
    for idx in epoch_order(len(split), batch_size, shuffle_seed, epoch, drop_last=drop_last):
        yield split.take(idx)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
