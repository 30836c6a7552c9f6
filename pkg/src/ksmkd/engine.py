"""Training loops: teacher finetuning, KSM episodes, KSM-guided distillation, baselines."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from . import tensor as T
from .data import EncodedSplit, epoch_order
from .errors import ConfigError, TrainingError
from .ksm import (
    Action,
    KnowledgeSelectionModule,
    KsmConfig,
    PhaseTransitions,
    RawStates,
    act,
    estimated_rewards,
    exploration_reward_hard,
    exploration_reward_soft,
    q_value,
    state_vectors,
    update_on_phase,
)
from .losses import DistillConfig, combine_soft, knowledge_losses, loss_fink
from .metrics_log import MetricsLog, NullLog
from .models import EncoderConfig, EncoderModel, LayerMap, Metrics, ModelOutput, evaluate, skip_layer_map
from .optim import make_optimizer
from .rng import make_rng

STRATEGIES = ("ksm_soft", "ksm_hard", "random_all", "random_one", "fixed")
ALL_KNOWLEDGE = np.ones(4)
# the 15 nonempty gate subsets, in binary order
NONEMPTY_GATES = np.array([[(m >> i) & 1 for i in range(4)] for m in range(1, 16)], dtype=np.float64)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 32
    student_lr: float = 1e-3
    teacher_lr: float = 1e-3
    teacher_epochs: int = 5
    optimizer: str = "adam"
    eval_batch_size: int = 256
    student_init: str = "teacher"  # or "random"
    eval_every_epoch: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.teacher_epochs < 1:
            raise ConfigError("epoch counts must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.student_lr <= 0 or self.teacher_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer must be 'adam' or 'sgd'")
        if self.student_init not in ("teacher", "random"):
            raise ConfigError("student_init must be 'teacher' or 'random'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(frozen=True)
class PhaseSchedule:
    """Partition of steps ``1..N`` into ``ceil(N / k)`` phases of ``k`` steps (last may be short)."""

    total_steps: int
    phase_size: int

    def __post_init__(self):
        if self.total_steps < 1 or self.phase_size < 1:
            raise ConfigError("schedule needs positive step count and phase size")

    @property
    def num_phases(self) -> int:
        return -(-self.total_steps // self.phase_size)

    def begin(self, j: int) -> int:
        return (j - 1) * self.phase_size + 1

    def end(self, j: int) -> int:
        return min(j * self.phase_size, self.total_steps)

    @property
    def bounds(self) -> list[tuple[int, int]]:
        return [(self.begin(j), self.end(j)) for j in range(1, self.num_phases + 1)]

    def phase_of(self, t: int) -> int:
        if not 1 <= t <= self.total_steps:
            raise ValueError(f"step {t} outside 1..{self.total_steps}")
        return (t - 1) // self.phase_size + 1


@dataclass
class RewardRecord:
    step: int
    phase: int
    reward_metric: str
    exploration: float
    immediate: float | None = None
    phase_reward: float | None = None
    estimated: float | None = None


@dataclass
class ExperimentRun:
    run_id: str
    seed: int
    strategy: str
    weights: list[float] | None = None
    trajectory: list[dict] = field(default_factory=list)
    final_dev: dict | None = None
    final_test: dict | None = None
    action_mean: list[float] | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def metric_improvement(before: Metrics, after: Metrics, metric: str) -> float:
    """Reward sign convention: improvement is positive."""
    if metric == "loss":
        return before.loss - after.loss
    return after.get(metric) - before.get(metric)


def _better(candidate: float, best: float | None, metric: str, min_delta: float) -> bool:
    if best is None:
        return True
    if metric == "loss":
        return candidate < best - min_delta
    return candidate > best + min_delta


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------

class TeacherCache:
    """Teacher logits and per-layer CLS vectors for every row of a split (eval mode)."""

    def __init__(self, teacher: EncoderModel, split: EncodedSplit, batch_size: int = 256):
        logits, cls = [], []
        with T.no_grad():
            for start in range(0, len(split), batch_size):
                out = teacher.forward(split.take(slice(start, start + batch_size)), train_mode=False)
                logits.append(out.logits.data)
                cls.append(np.stack([h.data for h in out.cls_embeddings]))
        self.logits = np.concatenate(logits)
        self.cls = np.concatenate(cls, axis=1)  # [L_T, n, H]
        self.num_layers = self.cls.shape[0]

    def output(self, index) -> ModelOutput:
        return ModelOutput(T.Tensor(self.logits[index]), [T.Tensor(h[index]) for h in self.cls])

    def last_cls(self, index) -> np.ndarray:
        return self.cls[-1][index]


def make_student(teacher: EncoderModel, student_cfg: EncoderConfig, train_cfg: TrainConfig, seed: int) -> EncoderModel:
    from .models import init_student_from_teacher

    if train_cfg.student_init == "teacher":
        return init_student_from_teacher(teacher, student_cfg)
    return EncoderModel(student_cfg, seed=seed)


def batch_plan(n: int, train_cfg: TrainConfig, seed: int, epochs: int | None = None) -> list[tuple[int, np.ndarray]]:
    """(epoch, row indices) for every step; drop-last batching."""
    plan = []
    for epoch in range(epochs or train_cfg.epochs):
        for idx in epoch_order(n, train_cfg.batch_size, seed, epoch, drop_last=True):
            plan.append((epoch, idx))
    if not plan:
        raise ConfigError("no full batch fits in the training split")
    return plan


def _fill_missing_grads(params) -> None:
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


def student_update(student: EncoderModel, optimizer, out: ModelOutput, teacher_out: ModelOutput, labels, weights,
                   layer_map: LayerMap, dcfg: DistillConfig):
    """One optimizer step on ``sum_m w_m L_m``; returns the four loss values."""
    losses = knowledge_losses(out, teacher_out, labels, layer_map, dcfg)
    values = losses.values()
    if not np.all(np.isfinite(values)):
        raise TrainingError(f"non-finite knowledge loss {values.tolist()}")
    loss = combine_soft(losses, weights)
    optimizer.zero_grad()
    if loss.requires_grad:
        loss.backward()
    _fill_missing_grads(optimizer.params)
    optimizer.step()
    return values


def _mask_unavailable(weights: np.ndarray, layer_map: LayerMap) -> np.ndarray:
    if layer_map.student_layers < 2:
        weights = weights.copy()
        weights[3] = 0.0
    return weights


def _metrics_dict(m: Metrics, prefix: str = "dev_") -> dict:
    return {f"{prefix}loss": m.loss, f"{prefix}accuracy": m.accuracy, f"{prefix}f1": m.f1}


# ---------------------------------------------------------------------------
# teacher
# ---------------------------------------------------------------------------

def train_teacher(cfg: EncoderConfig, train: EncodedSplit, dev: EncodedSplit, train_cfg: TrainConfig = TrainConfig(),
                  seed: int = 0, log: MetricsLog | None = None) -> tuple[EncoderModel, list[dict]]:
    """Finetune a teacher on the ground-truth loss for ``teacher_epochs`` epochs."""
    log = log or NullLog()
    model = EncoderModel(cfg, seed=seed)
    opt = make_optimizer(train_cfg.optimizer, model.parameters(), train_cfg.teacher_lr)
    dropout_rng = make_rng(seed, "dropout", "teacher")
    history = []
    step = 0
    plan = batch_plan(len(train), train_cfg, seed, epochs=train_cfg.teacher_epochs)
    for epoch in range(train_cfg.teacher_epochs):
        for ep, idx in plan:
            if ep != epoch:
                continue
            step += 1
            batch = train.take(idx)
            out = model.forward(batch, train_mode=True, rng=dropout_rng)
            loss = loss_fink(out.logits, batch.labels)
            if not math.isfinite(loss.item()):
                raise TrainingError(f"teacher loss became {loss.item()} at step {step} (epoch {epoch + 1})")
            opt.zero_grad()
            loss.backward()
            _fill_missing_grads(opt.params)
            opt.step()
        m = evaluate(model, dev, train_cfg.eval_batch_size)
        history.append({"epoch": epoch + 1, **_metrics_dict(m)})
        log.emit("epoch", stage="teacher", epoch=epoch + 1, global_step=step, **_metrics_dict(m))
    return model, history


# ---------------------------------------------------------------------------
# stage 1: KSM training
# ---------------------------------------------------------------------------

@dataclass
class KsmTrainingResult:
    ksm: KnowledgeSelectionModule
    best_episode: int
    episode_metrics: list[dict]
    reward_evaluations: list[int]
    action_traces: list[np.ndarray]
    rewards: list[list[RewardRecord]] = field(default_factory=list)


class _RewardEvaluator:
    """Dev-set evaluator with an instrumented call counter."""

    def __init__(self, dev: EncodedSplit, subset: int | None, batch_size: int):
        if len(dev) == 0:
            raise ConfigError("the reward (dev) set is empty")
        self.dev = dev.subset(subset)
        self.batch_size = batch_size
        self.count = 0

    def __call__(self, model: EncoderModel) -> Metrics:
        self.count += 1
        return evaluate(model, self.dev, self.batch_size)


def train_ksm(teacher: EncoderModel, student_init: EncoderModel, train: EncodedSplit, dev: EncodedSplit,
              ksm_cfg: KsmConfig = KsmConfig(), train_cfg: TrainConfig = TrainConfig(),
              dcfg: DistillConfig = DistillConfig(), seed: int = 0, log: MetricsLog | None = None,
              teacher_cache: TeacherCache | None = None) -> KsmTrainingResult:
    """Train the knowledge selection module over ``ksm_cfg.episodes`` distillation episodes.

    Each episode restarts the student from ``student_init`` and runs the full
    distillation schedule, split into phases of ``phase_size`` steps.  A phase
    ends with one dev evaluation (its reward) followed by a critic and an actor
    update.  The returned module is the one from the episode with the best
    end-of-episode dev metric.
    """
    log = log or NullLog()
    if len(dev) == 0:
        raise ConfigError("the reward (dev) set is empty")
    cache = teacher_cache or TeacherCache(teacher, train, train_cfg.eval_batch_size)
    layer_map = skip_layer_map(student_init.config.num_layers, teacher.config.num_layers, dcfg.layer_rounding)
    plan = batch_plan(len(train), train_cfg, seed)
    schedule = PhaseSchedule(len(plan), ksm_cfg.phase_size)
    ksm = KnowledgeSelectionModule(student_init.config.hidden_size, train_cfg.batch_size, ksm_cfg, seed=seed,
                                   teacher_cls_size=teacher.config.hidden_size)
    evaluator = _RewardEvaluator(dev, ksm_cfg.reward_subset_size, train_cfg.eval_batch_size)
    with T.no_grad():
        start_metrics = evaluate(student_init, evaluator.dev, train_cfg.eval_batch_size)
    metric = ksm_cfg.reward_metric
    mode = ksm_cfg.action_mode
    n_steps = schedule.total_steps

    best_value, best_state, best_episode, stale = None, None, 0, 0
    episode_metrics, eval_counts, traces, all_rewards = [], [], [], []
    for episode in range(1, ksm_cfg.episodes + 1):
        student = student_init.copy()
        opt = make_optimizer(train_cfg.optimizer, student.parameters(), train_cfg.student_lr)
        dropout_rng = make_rng(seed, "dropout", "student")
        evaluator.count = 0
        prev_metrics = start_metrics
        prev_phase_actions: list[np.ndarray] | None = None
        pending: ModelOutput | None = None
        trace = np.zeros((n_steps, 4))
        rewards: list[RewardRecord] = []
        base = (episode - 1) * n_steps

        for j, (b, e) in enumerate(schedule.bounds, start=1):
            k = e - b + 1
            raw_s = np.zeros((k, train_cfg.batch_size, student.config.hidden_size))
            raw_t = np.zeros((k, train_cfg.batch_size, teacher.config.hidden_size))
            actions = np.zeros((k, 4))
            explore = np.zeros(k)
            immediate = np.zeros(k)
            for t in range(b, e + 1):
                i = t - b
                epoch, idx = plan[t - 1]
                batch = train.take(idx)
                teacher_out = cache.output(idx)
                out = pending if pending is not None else student.forward(batch, True, dropout_rng)
                pending = None
                raw_s[i] = out.cls_embeddings[-1].data
                raw_t[i] = cache.last_cls(idx)
                with T.no_grad():
                    state = state_vectors(ksm, RawStates(raw_s[i : i + 1], raw_t[i : i + 1]))
                    action = act(ksm, state, step=t)
                    q = q_value(ksm, state, action).item()
                gates = action.gates(ksm_cfg.threshold)
                if prev_phase_actions is None:
                    r_e = ksm_cfg.scale
                elif mode == "soft":
                    r_e = exploration_reward_soft(action.values, prev_phase_actions, ksm_cfg.scale)
                else:
                    prev_gates = [(a >= ksm_cfg.threshold).astype(float) for a in prev_phase_actions]
                    r_e = exploration_reward_hard(gates, prev_gates, ksm_cfg.scale)
                weights = _mask_unavailable(action.weights(ksm_cfg.threshold), layer_map)
                loss_values = student_update(student, opt, out, teacher_out, batch.labels, weights, layer_map, dcfg)
                actions[i] = action.values
                explore[i] = r_e
                trace[t - 1] = action.values
                record = RewardRecord(step=t, phase=j, reward_metric=metric, exploration=r_e)
                if ksm_cfg.reward_mode == "immediate":
                    m = evaluator(student)
                    immediate[i] = metric_improvement(prev_metrics, m, metric)
                    record.immediate = float(immediate[i])
                    prev_metrics = m
                rewards.append(record)
                log.emit("step", stage="train_ksm", episode=episode, step=t, global_step=base + t, epoch=epoch + 1,
                         phase=j, action=action.values, gates=gates, weights=weights, q=q, exploration_reward=r_e,
                         losses=dict(zip(("fin", "res", "fea", "rel"), loss_values)))

            if ksm_cfg.reward_mode == "phase":
                m = evaluator(student)
                phase_reward = metric_improvement(prev_metrics, m, metric)
                prev_metrics = m
            else:
                phase_reward = float(immediate.sum())
            for rec in rewards[-k:]:
                rec.phase_reward = phase_reward

            next_state = next_action = None
            if e < n_steps:
                _, nidx = plan[e]
                pending = student.forward(train.take(nidx), True, dropout_rng)
                next_state = RawStates(pending.cls_embeddings[-1].data[None], cache.last_cls(nidx)[None])
                next_action = act(ksm, next_state).values
            tr = PhaseTransitions(
                states=RawStates(raw_s, raw_t),
                actions=actions,
                local_steps=np.arange(k),
                rewards=immediate if ksm_cfg.reward_mode == "immediate" else None,
                explore_rewards=explore,
                next_state=next_state,
                next_action=next_action,
            )
            stats = update_on_phase(ksm, tr, phase_reward)
            with T.no_grad():
                r_hat = estimated_rewards(ksm, tr).data
            for rec, rh in zip(rewards[-k:], r_hat):
                rec.estimated = float(rh)
            prev_phase_actions = list(actions)
            log.emit("phase", stage="train_ksm", episode=episode, phase=j, begin=b, end=e, global_step=base + e,
                     reward=phase_reward, reward_metric=metric, **_metrics_dict(prev_metrics), **stats)

        end_metrics = prev_metrics
        value = end_metrics.get(metric)
        eval_counts.append(evaluator.count)
        traces.append(trace)
        all_rewards.append(rewards)
        episode_metrics.append({"episode": episode, "reward_evaluations": evaluator.count, **_metrics_dict(end_metrics)})
        log.emit("episode", stage="train_ksm", episode=episode, global_step=base + n_steps,
                 reward_evaluations=evaluator.count, **_metrics_dict(end_metrics))
        if _better(value, best_value, metric, ksm_cfg.min_delta):
            best_value, best_state, best_episode, stale = value, ksm.state_dict(), episode, 0
        else:
            stale += 1
            if stale >= ksm_cfg.patience:
                break

    ksm.load_state_dict(best_state)
    ksm.reset_optimizers()
    return KsmTrainingResult(ksm, best_episode, episode_metrics, eval_counts, traces, all_rewards)


# ---------------------------------------------------------------------------
# stage 2 and baselines: one loop, different weight policies
# ---------------------------------------------------------------------------

Policy = Callable[[int, int, ModelOutput, np.ndarray], tuple[np.ndarray, np.ndarray | None, np.ndarray | None]]


def _run_policy(teacher: EncoderModel, student_init: EncoderModel, train: EncodedSplit, dev: EncodedSplit | None,
                policy: Policy, train_cfg: TrainConfig, dcfg: DistillConfig, seed: int, run_tag, log: MetricsLog,
                test: EncodedSplit | None = None, cache: TeacherCache | None = None, strategy: str = "",
                stage: str = "distill") -> tuple[EncoderModel, ExperimentRun]:
    cache = cache or TeacherCache(teacher, train, train_cfg.eval_batch_size)
    layer_map = skip_layer_map(student_init.config.num_layers, teacher.config.num_layers, dcfg.layer_rounding)
    plan = batch_plan(len(train), train_cfg, seed)
    student = student_init.copy()
    opt = make_optimizer(train_cfg.optimizer, student.parameters(), train_cfg.student_lr)
    dropout_rng = make_rng(seed, "dropout", "student")
    run = ExperimentRun(run_id=f"{strategy}-{seed}-{run_tag}", seed=seed, strategy=strategy)
    weight_sum = np.zeros(4)
    for t, (epoch, idx) in enumerate(plan, start=1):
        batch = train.take(idx)
        teacher_out = cache.output(idx)
        out = student.forward(batch, True, dropout_rng)
        weights, action, gates = policy(t, epoch, out, cache.last_cls(idx))
        weights = _mask_unavailable(np.asarray(weights, dtype=np.float64), layer_map)
        weight_sum += weights
        values = student_update(student, opt, out, teacher_out, batch.labels, weights, layer_map, dcfg)
        log.emit("step", stage=stage, run=run.run_id, step=t, global_step=t, epoch=epoch + 1, phase=None,
                 action=action, gates=gates, weights=weights, losses=dict(zip(("fin", "res", "fea", "rel"), values)))
        last_of_epoch = t == len(plan) or plan[t][0] != epoch
        if last_of_epoch and dev is not None and (train_cfg.eval_every_epoch or t == len(plan)):
            m = evaluate(student, dev, train_cfg.eval_batch_size)
            run.trajectory.append({"epoch": epoch + 1, "step": t, **_metrics_dict(m)})
            log.emit("epoch", stage=stage, run=run.run_id, epoch=epoch + 1, global_step=t, **_metrics_dict(m))
    if dev is not None:
        run.final_dev = _metrics_dict(evaluate(student, dev, train_cfg.eval_batch_size), "")
    if test is not None and len(test):
        run.final_test = _metrics_dict(evaluate(student, test, train_cfg.eval_batch_size), "")
    run.action_mean = (weight_sum / len(plan)).tolist()
    log.emit("run", stage=stage, run=run.run_id, strategy=strategy, final_dev=run.final_dev, final_test=run.final_test,
             global_step=len(plan))
    return student, run


def distill(teacher: EncoderModel, student_init: EncoderModel, ksm: KnowledgeSelectionModule, train: EncodedSplit,
            mode: str = "soft", train_cfg: TrainConfig = TrainConfig(), dcfg: DistillConfig = DistillConfig(),
            seed: int = 0, dev: EncodedSplit | None = None, test: EncodedSplit | None = None,
            log: MetricsLog | None = None, teacher_cache: TeacherCache | None = None) -> tuple[EncoderModel, ExperimentRun]:
    """Distill with a trained, frozen KSM choosing the knowledge weights at every step.

    ``dev`` is only used for reporting; no rewards are computed and the KSM is
    never updated.
    """
    log = log or NullLog()
    if mode not in ("soft", "hard"):
        raise ConfigError("mode must be 'soft' or 'hard'")
    if mode != ksm.config.action_mode:
        warnings.warn(f"distilling in {mode} mode with a KSM trained in {ksm.config.action_mode} mode", stacklevel=2)
        log.emit("warning", message=f"mode mismatch: distill={mode} ksm={ksm.config.action_mode}")
    threshold = ksm.config.threshold

    def policy(t, epoch, out, teacher_last_cls):
        with T.no_grad():
            raw = RawStates(out.cls_embeddings[-1].data[None], teacher_last_cls[None])
            action = act(ksm, state_vectors(ksm, raw), step=t)
        gates = action.gates(threshold)
        weights = action.values if mode == "soft" else gates
        return weights, action.values, gates

    return _run_policy(teacher, student_init, train, dev, policy, train_cfg, dcfg, seed, "ksm", log, test,
                       teacher_cache, strategy=f"ksm_{mode}")


def run_fixed(teacher: EncoderModel, student_init: EncoderModel, train: EncodedSplit, weights,
              train_cfg: TrainConfig = TrainConfig(), dcfg: DistillConfig = DistillConfig(), seed: int = 0,
              dev: EncodedSplit | None = None, test: EncodedSplit | None = None, log: MetricsLog | None = None,
              teacher_cache: TeacherCache | None = None) -> tuple[EncoderModel, ExperimentRun]:
    """Baseline with constant knowledge weights (fin, res, fea, rel)."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape != (4,) or np.any(w < 0):
        raise ConfigError("fixed weights must be four non-negative numbers")
    if not np.any(w > 0):
        raise ConfigError("fixed weights are all zero; the student would receive no learning signal")

    def policy(t, epoch, out, teacher_last_cls):
        return w, None, None

    student, run = _run_policy(teacher, student_init, train, dev, policy, train_cfg, dcfg, seed, "fixed",
                               log or NullLog(), test, teacher_cache, strategy="fixed", stage="baseline")
    run.weights = w.tolist()
    return student, run


def random_policy(scope: str, mode: str, rng: np.random.Generator, steps_per_epoch: int | None = None) -> Policy:
    """Uniform random knowledge selection; ``scope='one'`` reverts to all knowledge after epoch 1."""
    if scope not in ("all", "one"):
        raise ConfigError("scope must be 'all' or 'one'")
    if mode not in ("soft", "hard"):
        raise ConfigError("mode must be 'soft' or 'hard'")

    def policy(t, epoch, out, teacher_last_cls):
        if scope == "one" and epoch >= 1:
            return ALL_KNOWLEDGE, None, None
        if mode == "soft":
            a = rng.random(4)
            return a, a, None
        g = NONEMPTY_GATES[rng.integers(len(NONEMPTY_GATES))]
        return g, None, g

    return policy


@dataclass
class RandomSummary:
    runs: list[ExperimentRun]
    best_accuracy: float
    worst_accuracy: float
    mean_accuracy: float

    @property
    def gap(self) -> float:
        return self.best_accuracy - self.worst_accuracy


def run_random(teacher: EncoderModel, student_init: EncoderModel, train: EncodedSplit, dev: EncodedSplit,
               scope: str = "all", mode: str = "soft", trials: int = 1, train_cfg: TrainConfig = TrainConfig(),
               dcfg: DistillConfig = DistillConfig(), seed: int = 0, test: EncodedSplit | None = None,
               log: MetricsLog | None = None, teacher_cache: TeacherCache | None = None,
               on_run: Callable[[EncoderModel, ExperimentRun], None] | None = None,
               trial_log: Callable[[int], MetricsLog] | None = None) -> RandomSummary:
    """Random-All / Random-One probes repeated ``trials`` times; only the action stream varies per trial.

    ``trial_log(i)`` may supply a separate log per trial; otherwise all trials share ``log``.
    """
    if trials < 1:
        raise ConfigError("trials must be at least 1")
    if len(dev) == 0:
        raise ConfigError("dev set is empty")
    cache = teacher_cache or TeacherCache(teacher, train, train_cfg.eval_batch_size)
    runs = []
    for trial in range(trials):
        rng = make_rng(seed, "random-actions", scope, mode, trial)
        run_log = trial_log(trial) if trial_log is not None else (log or NullLog())
        student, run = _run_policy(teacher, student_init, train, dev, random_policy(scope, mode, rng), train_cfg, dcfg,
                                   seed, trial, run_log, test, cache, strategy=f"random_{scope}",
                                   stage="baseline")
        if trial_log is not None:
            run_log.close()
        if on_run is not None:
            on_run(student, run)
        runs.append(run)
    accs = [r.final_dev["accuracy"] for r in runs]
    return RandomSummary(runs, max(accs), min(accs), float(np.mean(accs)))
