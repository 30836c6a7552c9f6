"""Config-driven stages: data generation, teacher, KSM, distillation, baselines, sweeps.

Every stage writes into its own directory: the effective config
(``config.ini``, written before training starts), a metrics log
(``metrics.jsonl``), its checkpoints and a ``manifest.json`` holding the
config snapshot, seed, input hashes, artifact paths, step counts and wall
clock time.
"""
from __future__ import annotations

import csv
import itertools
import json
import platform
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .config import RunConfig, apply_overrides, bind_data, parse_weights, to_ini, write_config
from .data import DatasetSplits, EncodedSplit, TsvSchema, Vocabulary, encode, file_sha256, load_splits, make_synthetic, write_splits
from .engine import (
    ExperimentRun,
    TeacherCache,
    batch_plan,
    distill,
    make_student,
    run_fixed,
    run_random,
    train_ksm,
    train_teacher,
)
from .errors import CheckpointError, ConfigError
from .metrics_log import MetricsLog
from .models import EncoderModel, evaluate

MANIFEST_VERSION = 1


@dataclass
class RunManifest:
    stage: str
    config: dict
    config_digest: str
    seed: int
    inputs: dict[str, str] = field(default_factory=dict)  # name -> sha256
    artifacts: dict[str, str] = field(default_factory=dict)  # name -> path
    steps: int = 0
    wall_clock_seconds: float = 0.0
    results: dict = field(default_factory=dict)
    format_version: int = MANIFEST_VERSION
    python: str = field(default_factory=platform.python_version)
    numpy: str = np.__version__

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), sort_keys=True, indent=2) + "\n", encoding="utf-8")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if data.get("format_version") != MANIFEST_VERSION:
            raise ConfigError(f"{path}: manifest version {data.get('format_version')} is not supported")
        return cls(**data)


class _Stage:
    """Output directory, config echo, log and manifest for one stage."""

    def __init__(self, cfg: RunConfig, stage: str, out_dir=None):
        self.cfg = cfg
        self.dir = Path(out_dir if out_dir is not None else Path(cfg.run.output_dir) / stage)
        self.dir.mkdir(parents=True, exist_ok=True)
        write_config(cfg, self.dir / "config.ini")
        self.log = MetricsLog(self.dir / "metrics.jsonl")
        self.log.emit("config", stage=stage, config=cfg.to_dict(), config_digest=cfg.digest())
        self.manifest = RunManifest(stage, cfg.to_dict(), cfg.digest(), cfg.run.seed)
        self.manifest.artifacts["config"] = str(self.dir / "config.ini")
        self.manifest.artifacts["metrics"] = str(self.dir / "metrics.jsonl")
        self._t0 = time.perf_counter()

    def finish(self) -> RunManifest:
        self.manifest.wall_clock_seconds = round(time.perf_counter() - self._t0, 3)
        self.log.close()
        self.manifest.write(self.dir / "manifest.json")
        return self.manifest


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def _schema(cfg: RunConfig) -> TsvSchema:
    return TsvSchema(text_a=cfg.data.text_a, label=cfg.data.label, text_b=cfg.data.text_b)


def load_dataset(cfg: RunConfig) -> tuple[DatasetSplits, dict[str, str]]:
    """The configured dataset and the content hashes of its input files."""
    if cfg.data.data_dir is None:
        return make_synthetic(cfg.task, cfg.data_seed), {}
    d = Path(cfg.data.data_dir)
    if not d.is_dir():
        raise ConfigError(f"data_dir {d} does not exist")
    ds = load_splits(d, _schema(cfg))
    hashes = {f"data/{p.name}": file_sha256(p) for p in sorted(d.glob("*.tsv"))}
    return ds, hashes


@dataclass
class PreparedData:
    splits: DatasetSplits
    vocab: Vocabulary
    train: EncodedSplit
    dev: EncodedSplit
    test: EncodedSplit
    hashes: dict[str, str]


def prepare(cfg: RunConfig, vocab: Vocabulary | None = None) -> PreparedData:
    ds, hashes = load_dataset(cfg)
    vocab = vocab or ds.vocab
    n = cfg.teacher.max_seq_len
    return PreparedData(ds, vocab, encode(ds.train, vocab, n), encode(ds.dev, vocab, n), encode(ds.test, vocab, n), hashes)


def make_data(cfg: RunConfig, out_dir) -> dict[str, Path]:
    ds = make_synthetic(cfg.task, cfg.data_seed)
    return write_splits(ds, out_dir, cfg.task, cfg.data_seed)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def _load_teacher(path) -> tuple[EncoderModel, Vocabulary]:
    model, vocab, _ = ckpt.load_model(path)
    if vocab is None:
        raise CheckpointError(f"{path}: teacher checkpoint carries no vocabulary")
    return model, vocab


def _check_teacher(cfg: RunConfig, teacher: EncoderModel) -> RunConfig:
    t = teacher.config
    bound = bind_data(cfg, t.vocab_size, t.num_classes)
    mismatched = [k for k in ("num_layers", "hidden_size", "num_heads", "max_seq_len") if getattr(t, k) != getattr(bound.teacher, k)]
    if mismatched:
        raise ConfigError(f"teacher checkpoint disagrees with [teacher] on {', '.join(mismatched)}")
    return replace(bound, teacher=t)


def run_train_teacher(cfg: RunConfig, out_dir=None) -> RunManifest:
    stage = _Stage(cfg, "teacher", out_dir)
    data = prepare(cfg)
    cfg = bind_data(cfg, len(data.vocab), data.splits.num_classes)
    teacher, history = train_teacher(cfg.teacher, data.train, data.dev, cfg.train, cfg.run.seed, stage.log)
    path = ckpt.save_model(stage.dir / "teacher.ckpt", teacher, data.vocab)
    m = stage.manifest
    m.inputs.update(data.hashes)
    m.artifacts["teacher"] = str(path)
    m.steps = len(batch_plan(len(data.train), cfg.train, cfg.run.seed, epochs=cfg.train.teacher_epochs))
    m.results = {"history": history, "dev": asdict(evaluate(teacher, data.dev)),
                 "test": asdict(evaluate(teacher, data.test)) if len(data.test) else None}
    return stage.finish()


def _student_context(cfg: RunConfig, teacher_path):
    teacher, vocab = _load_teacher(teacher_path)
    cfg = _check_teacher(cfg, teacher)
    data = prepare(cfg, vocab)
    cache = TeacherCache(teacher, data.train, cfg.train.eval_batch_size)
    student0 = make_student(teacher, cfg.student, cfg.train, cfg.run.seed)
    return cfg, teacher, data, cache, student0


def run_train_ksm(cfg: RunConfig, teacher_path, out_dir=None) -> RunManifest:
    stage = _Stage(cfg, "ksm", out_dir)
    cfg, teacher, data, cache, student0 = _student_context(cfg, teacher_path)
    result = train_ksm(teacher, student0, data.train, data.dev, cfg.ksm, cfg.train, cfg.distill, cfg.run.seed,
                       stage.log, cache)
    path = ckpt.save_ksm(stage.dir / "ksm.ckpt", result.ksm, {"best_episode": result.best_episode})
    m = stage.manifest
    m.inputs.update(data.hashes)
    m.inputs["teacher"] = file_sha256(teacher_path)
    m.artifacts["ksm"] = str(path)
    m.steps = len(batch_plan(len(data.train), cfg.train, cfg.run.seed)) * len(result.episode_metrics)
    m.results = {"best_episode": result.best_episode, "episodes": result.episode_metrics,
                 "reward_evaluations": result.reward_evaluations}
    return stage.finish()


def _record_run(m: RunManifest, run: ExperimentRun) -> None:
    m.results = {"run_id": run.run_id, "strategy": run.strategy, "final_dev": run.final_dev,
                 "final_test": run.final_test, "action_mean": run.action_mean, "weights": run.weights,
                 "trajectory": run.trajectory}


def run_distill(cfg: RunConfig, teacher_path, ksm_path, mode: str | None = None, out_dir=None) -> RunManifest:
    stage = _Stage(cfg, "distill", out_dir)
    cfg, teacher, data, cache, student0 = _student_context(cfg, teacher_path)
    ksm, _ = ckpt.load_ksm(ksm_path)
    mode = mode or ksm.config.action_mode
    student, run = distill(teacher, student0, ksm, data.train, mode, cfg.train, cfg.distill, cfg.run.seed,
                           data.dev, data.test, stage.log, cache)
    path = ckpt.save_model(stage.dir / "student.ckpt", student, data.vocab, {"strategy": run.strategy})
    m = stage.manifest
    m.inputs.update(data.hashes)
    m.inputs["teacher"] = file_sha256(teacher_path)
    m.inputs["ksm"] = file_sha256(ksm_path)
    m.artifacts["student"] = str(path)
    m.steps = len(batch_plan(len(data.train), cfg.train, cfg.run.seed))
    _record_run(m, run)
    return stage.finish()


def run_baseline(cfg: RunConfig, teacher_path, kind: str, trials: int | None = None, mode: str = "soft",
                 out_dir=None) -> RunManifest:
    """``kind`` is ``fixed``, ``random-all`` or ``random-one``."""
    if kind not in ("fixed", "random-all", "random-one"):
        raise ConfigError(f"unknown baseline {kind!r}")
    stage = _Stage(cfg, f"baseline-{kind}", out_dir)
    cfg, teacher, data, cache, student0 = _student_context(cfg, teacher_path)
    m = stage.manifest
    m.inputs.update(data.hashes)
    m.inputs["teacher"] = file_sha256(teacher_path)
    steps = len(batch_plan(len(data.train), cfg.train, cfg.run.seed))
    if kind == "fixed":
        student, run = run_fixed(teacher, student0, data.train, parse_weights(cfg.run.fixed_weights), cfg.train,
                                 cfg.distill, cfg.run.seed, data.dev, data.test, stage.log, cache)
        m.artifacts["student"] = str(ckpt.save_model(stage.dir / "student.ckpt", student, data.vocab))
        m.steps = steps
        _record_run(m, run)
        return stage.finish()

    trials = cfg.run.trials if trials is None else trials
    trial_dirs: list[Path] = []

    def trial_log(i: int) -> MetricsLog:
        d = stage.dir / "trials" / f"trial-{i:03d}"
        d.mkdir(parents=True, exist_ok=True)
        trial_dirs.append(d)
        return MetricsLog(d / "metrics.jsonl")

    def on_run(student, run):
        d = trial_dirs[-1]
        tm = RunManifest(f"baseline-{kind}-trial", cfg.to_dict(), cfg.digest(), cfg.run.seed, dict(m.inputs),
                         {"metrics": str(d / "metrics.jsonl")}, steps)
        _record_run(tm, run)
        tm.write(d / "manifest.json")

    summary = run_random(teacher, student0, data.train, data.dev, kind.split("-")[1], mode, trials, cfg.train,
                         cfg.distill, cfg.run.seed, data.test, stage.log, cache, on_run=on_run, trial_log=trial_log)
    accs = [r.final_dev["accuracy"] for r in summary.runs]
    report = {
        "kind": kind,
        "mode": mode,
        "trials": trials,
        "best_accuracy": summary.best_accuracy,
        "worst_accuracy": summary.worst_accuracy,
        "mean_accuracy": summary.mean_accuracy,
        "gap": summary.gap,
        "best_trial": int(np.argmax(accs)),
        "worst_trial": int(np.argmin(accs)),
        "accuracies": accs,
    }
    (stage.dir / "summary.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    m.artifacts["summary"] = str(stage.dir / "summary.json")
    m.artifacts["trials"] = str(stage.dir / "trials")
    m.steps = steps * trials
    m.results = {k: v for k, v in report.items() if k != "accuracies"}
    return stage.finish()


def run_evaluate(model_path, cfg: RunConfig, split: str = "dev") -> dict:
    model, vocab, _ = ckpt.load_model(model_path)
    cfg = bind_data(cfg, model.config.vocab_size, model.config.num_classes)
    cfg = replace(cfg, teacher=replace(cfg.teacher, max_seq_len=model.config.max_seq_len))
    data = prepare(cfg, vocab)
    target = {"train": data.train, "dev": data.dev, "test": data.test}.get(split)
    if target is None:
        raise ConfigError(f"unknown split {split!r}")
    if len(target) == 0:
        raise ConfigError(f"split {split!r} is empty")
    return {"split": split, "examples": len(target), **asdict(evaluate(model, target))}


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def parse_grid(items: list[str]) -> dict[str, list[str]]:
    """``section.key=v1,v2,...`` entries to an ordered grid."""
    grid: dict[str, list[str]] = {}
    for item in items:
        key, sep, values = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"grid entry {item!r} is not of the form section.key=v1,v2")
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not vals:
            raise ConfigError(f"grid entry {item!r} lists no values")
        grid[key.strip()] = vals
    return grid


def grid_points(grid: dict[str, list[str]]) -> list[list[str]]:
    if not grid:
        raise ConfigError("sweep grid is empty")
    keys = list(grid)
    return [[f"{k}={v}" for k, v in zip(keys, combo)] for combo in itertools.product(*(grid[k] for k in keys))]


def run_sweep(cfg: RunConfig, teacher_path, grid: dict[str, list[str]], out_dir=None) -> RunManifest:
    """Train a KSM and distill for every grid point; rank by final dev accuracy.

    Every point runs in its own subdirectory, so points can also be farmed
    out to separate processes with the same layout.
    """
    points = grid_points(grid)
    configs = [apply_overrides(cfg, p) for p in points]  # validate everything before any training
    stage = _Stage(cfg, "sweep", out_dir)
    rows = []
    for i, (overrides, pcfg) in enumerate(zip(points, configs)):
        d = stage.dir / f"point-{i:03d}"
        km = run_train_ksm(pcfg, teacher_path, d / "ksm")
        dm = run_distill(pcfg, teacher_path, km.artifacts["ksm"], out_dir=d / "distill")
        rows.append({"point": i, "overrides": overrides, "dev_accuracy": dm.results["final_dev"]["accuracy"],
                     "dev_loss": dm.results["final_dev"]["loss"], "dir": str(d)})
        stage.log.emit("run", stage="sweep", point=i, overrides=overrides, global_step=i + 1,
                       dev_accuracy=rows[-1]["dev_accuracy"])
    ranking = sorted(rows, key=lambda r: (-r["dev_accuracy"], r["dev_loss"], r["point"]))
    for rank, row in enumerate(ranking, start=1):
        row["rank"] = rank
    with open(stage.dir / "ranking.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["rank", "point", "dev_accuracy", "dev_loss", "overrides"])
        for row in ranking:
            writer.writerow([row["rank"], row["point"], row["dev_accuracy"], row["dev_loss"], " ".join(row["overrides"])])
    m = stage.manifest
    m.inputs["teacher"] = file_sha256(teacher_path)
    m.artifacts["ranking"] = str(stage.dir / "ranking.csv")
    m.results = {"ranking": ranking, "best": ranking[0]}
    return stage.finish()


def effective_config_text(cfg: RunConfig) -> str:
    return to_ini(cfg)
