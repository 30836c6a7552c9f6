"""Run configuration: one flat INI file, section per component.

Grammar::

    [section]
    key = value        ; ints, floats, true/false, none, or bare strings

Sections: ``teacher`` and ``student`` (encoder shapes), ``distill``,
``ksm``, ``train``, ``task`` (synthetic data generator), ``data`` and
``run``.  Unknown sections or keys are rejected.  ``vocab_size`` and
``num_classes`` of both encoders are filled in from the dataset at run time.
Overrides use ``section.key=value`` with the same value grammar.
"""
from __future__ import annotations

import configparser
import hashlib
import io
import json
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .data import TaskSpec
from .engine import TrainConfig
from .errors import ConfigError
from .ksm import KsmConfig
from .losses import DistillConfig
from .models import EncoderConfig

CONFIG_VERSION = 1


@dataclass(frozen=True)
class DataConfig:
    data_dir: str | None = None  # TSV directory; None means generate from [task]
    data_seed: int | None = None  # generator seed; None reuses run.seed
    text_a: str = "text_a"
    text_b: str | None = None
    label: str = "label"


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    output_dir: str = "runs/default"
    strict_paper_grid: bool = False
    fixed_weights: str = "1,1,1,1"
    trials: int = 50


def _desk_teacher() -> EncoderConfig:
    return EncoderConfig(num_layers=4, hidden_size=64, num_heads=4, num_classes=3, intermediate_size=128)


def _desk_student() -> EncoderConfig:
    return EncoderConfig(num_layers=2, hidden_size=64, num_heads=4, num_classes=3, intermediate_size=128)


def desk_task() -> TaskSpec:
    """Three-class marker task used by the acceptance runs."""
    return TaskSpec(num_classes=3, min_len=8, max_len=14, markers_per_class=6, max_marker_count=3, filler_vocab=100)


@dataclass(frozen=True)
class RunConfig:
    teacher: EncoderConfig = field(default_factory=_desk_teacher)
    student: EncoderConfig = field(default_factory=_desk_student)
    distill: DistillConfig = field(default_factory=DistillConfig)
    ksm: KsmConfig = field(default_factory=KsmConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=3, teacher_epochs=8))
    task: TaskSpec = field(default_factory=desk_task)
    data: DataConfig = field(default_factory=DataConfig)
    run: RunSection = field(default_factory=RunSection)

    def __post_init__(self):
        if self.student.num_layers > self.teacher.num_layers:
            raise ConfigError("student has more layers than the teacher")
        if self.student.max_seq_len != self.teacher.max_seq_len:
            raise ConfigError("teacher and student must share max_seq_len")
        if self.run.strict_paper_grid:
            check_paper_grid(self)
        parse_weights(self.run.fixed_weights)

    @property
    def data_seed(self) -> int:
        return self.run.seed if self.data.data_seed is None else self.data.data_seed

    def to_dict(self) -> dict:
        return {name: _section_dict(getattr(self, name)) for name in SECTIONS}

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_overrides(self, overrides: list[str] | None) -> "RunConfig":
        return apply_overrides(self, overrides or [])


SECTIONS = ("teacher", "student", "distill", "ksm", "train", "task", "data", "run")


def _section_dict(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def parse_weights(text: str) -> list[float]:
    try:
        w = [float(x) for x in str(text).split(",")]
    except ValueError:
        raise ConfigError(f"fixed_weights must be four comma-separated numbers, got {text!r}") from None
    if len(w) != 4 or any(x < 0 for x in w) or not any(x > 0 for x in w):
        raise ConfigError(f"fixed_weights must be four non-negative numbers, not all zero, got {text!r}")
    return w


# ---------------------------------------------------------------------------
# value grammar
# ---------------------------------------------------------------------------

def _field_types(cls) -> dict[str, typing.Any]:
    return typing.get_type_hints(cls)


def _parse_value(raw: str, tp, where: str):
    text = raw.strip()
    args = typing.get_args(tp)
    if args and type(None) in args:
        if text.lower() in ("none", "null", ""):
            return None
        tp = next(a for a in args if a is not type(None))
    try:
        if tp is bool:
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {text!r} as {tp.__name__}") from None
    return text


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _build_section(cls, values: dict, where: str):
    types = _field_types(cls)
    unknown = set(values) - set(types)
    if unknown:
        raise ConfigError(f"[{where}] unknown key(s): {', '.join(sorted(unknown))}")
    parsed = {k: _parse_value(v, types[k], f"{where}.{k}") if isinstance(v, str) else v for k, v in values.items()}
    try:
        return cls(**parsed)
    except ConfigError as exc:
        raise ConfigError(f"[{where}] {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"[{where}] {exc}") from None


def _section_class(name: str):
    return _field_types(RunConfig)[name]


def from_sections(sections: dict[str, dict]) -> RunConfig:
    unknown = set(sections) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    base = RunConfig()
    parts = {}
    for name in SECTIONS:
        current = _section_dict(getattr(base, name))
        current.update(sections.get(name, {}))
        parts[name] = _build_section(_section_class(name), current, name)
    task = parts["task"]
    try:
        task.validate()
    except ConfigError as exc:
        raise ConfigError(f"[task] {exc}") from None
    return RunConfig(**parts)


def read_config(path) -> RunConfig:
    """Parse an INI file; a missing file is a configuration error."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}".splitlines()[0]) from None
    sections = {s: dict(parser.items(s)) for s in parser.sections()}
    version = sections.get("run", {}).pop("config_version", None)
    if version is not None and int(version) != CONFIG_VERSION:
        raise ConfigError(f"config_version {version} is not supported (expected {CONFIG_VERSION})")
    return from_sections(sections)


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    cfg = read_config(path) if path is not None else RunConfig()
    return apply_overrides(cfg, overrides or [])


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    if not overrides:
        return cfg
    sections = {name: {k: v for k, v in _section_dict(getattr(cfg, name)).items()} for name in SECTIONS}
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        if section not in sections:
            raise ConfigError(f"override {item!r}: unknown section {section!r}")
        sections[section][name] = value
    return from_sections(sections)


def to_ini(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    for name in SECTIONS:
        parser[name] = {k: _format_value(v) for k, v in _section_dict(getattr(cfg, name)).items()}
    parser["run"]["config_version"] = str(CONFIG_VERSION)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def write_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_ini(cfg), encoding="utf-8")
    return path


def bind_data(cfg: RunConfig, vocab_size: int, num_classes: int) -> RunConfig:
    """Fill the data-dependent encoder sizes."""
    return replace(
        cfg,
        teacher=replace(cfg.teacher, vocab_size=vocab_size, num_classes=num_classes),
        student=replace(cfg.student, vocab_size=vocab_size, num_classes=num_classes),
    )


# ---------------------------------------------------------------------------
# published search space
# ---------------------------------------------------------------------------

PAPER_GRID = {
    ("ksm", "threshold"): (0.1, 0.2, 0.3),
    ("ksm", "phase_size"): (32, 64, 96, 128),
    ("ksm", "scale"): (0.1, 0.2),
    ("ksm", "discount"): (0.98,),
    ("ksm", "actor_lr"): (2e-4,),
    ("ksm", "critic_lr"): (2e-4,),
    ("ksm", "feature_size"): (8,),
    ("ksm", "hidden_size"): (256,),
    ("train", "student_lr"): (2e-5, 3e-5, 5e-5),
    ("train", "teacher_lr"): (5e-5,),
    ("train", "batch_size"): (32,),
    ("train", "epochs"): (5,),
    ("train", "teacher_epochs"): (5,),
}


def check_paper_grid(cfg: RunConfig) -> None:
    bad = []
    for (section, key), allowed in PAPER_GRID.items():
        value = getattr(getattr(cfg, section), key)
        if not any(abs(value - a) <= 1e-12 * max(1.0, abs(a)) for a in allowed):
            bad.append(f"{section}.{key}={value} not in {list(allowed)}")
    if bad:
        raise ConfigError("strict_paper_grid: " + "; ".join(bad))
