"""Knowledge selection module: feature networks, actor, critic and their objectives.

The state for one training step is built from the last-layer CLS vectors of
student and teacher over a batch: each vector goes through its feature
network and the per-sample ``[student, teacher]`` features are concatenated
in sample order.  The actor maps a state to four sigmoid weights (one per
knowledge type); the critic scores the concatenated (state, action) pair.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ScheduleError
from .losses import harden
from .nn import MLP, Module
from .optim import make_optimizer
from .rng import make_rng
from .tensor import Tensor

REWARD_METRICS = ("loss", "accuracy", "f1")


class StateShapeError(ValueError):
    """The batch feeding a state does not match the configured batch size."""


@dataclass(frozen=True)
class KsmConfig:
    threshold: float = 0.2
    phase_size: int = 32
    scale: float = 0.1
    discount: float = 0.98
    actor_lr: float = 2e-4
    critic_lr: float = 2e-4
    feature_size: int = 8
    feature_hidden: int | None = None
    hidden_size: int = 256
    episodes: int = 10
    reward_metric: str = "loss"
    action_mode: str = "soft"
    exploration_weight: float = 1.0
    discount_floor: float = 1e-6
    patience: int = 3
    min_delta: float = 1e-4
    reward_mode: str = "phase"  # "immediate" evaluates the dev set after every step
    reward_subset_size: int | None = None
    optimizer: str = "adam"
    actor_final_init: float | None = 3e-3  # uniform bound for the actor's output layer; None keeps Glorot

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must lie in [0, 1]")
        if self.phase_size < 1:
            raise ConfigError("phase_size must be at least 1")
        if self.scale < 0:
            raise ConfigError("scale must be non-negative")
        if not 0.0 < self.discount <= 1.0:
            raise ConfigError("discount must lie in (0, 1]")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.feature_size < 1 or self.hidden_size < 1 or self.episodes < 1:
            raise ConfigError("sizes and episode count must be positive")
        if self.reward_metric not in REWARD_METRICS:
            raise ConfigError(f"reward_metric must be one of {REWARD_METRICS}")
        if self.action_mode not in ("soft", "hard"):
            raise ConfigError("action_mode must be 'soft' or 'hard'")
        if self.reward_mode not in ("phase", "immediate"):
            raise ConfigError("reward_mode must be 'phase' or 'immediate'")
        if self.exploration_weight < 0:
            raise ConfigError("exploration_weight must be non-negative")
        if self.actor_final_init is not None and self.actor_final_init < 0:
            raise ConfigError("actor_final_init must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer must be 'adam' or 'sgd'")
        if self.discount ** self.phase_size < self.discount_floor:
            raise ConfigError("discount**phase_size falls below discount_floor")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "KsmConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class State:
    vector: Tensor  # [1, batch * 2 * feature_size]
    step: int = 0


@dataclass
class Action:
    values: np.ndarray  # four components in [0, 1]
    mode: str = "soft"
    step: int = 0

    def gates(self, threshold: float) -> np.ndarray:
        return harden(self.values, threshold)

    def weights(self, threshold: float) -> np.ndarray:
        """Coefficients applied to the knowledge losses under this action's mode."""
        return self.values.copy() if self.mode == "soft" else self.gates(threshold)


@dataclass
class RawStates:
    """Last-layer CLS vectors for ``n`` steps, before the feature networks."""

    student: np.ndarray  # [n, batch, H]
    teacher: np.ndarray  # [n, batch, H]

    def __len__(self) -> int:
        return self.student.shape[0]


class KnowledgeSelectionModule(Module):
    """Four networks: two 2-layer feature MLPs, a 3-layer actor and a 3-layer critic."""

    def __init__(self, cls_size: int, batch_size: int, cfg: KsmConfig = KsmConfig(), seed: int = 0, teacher_cls_size: int | None = None):
        self.config = cfg
        self.cls_size = cls_size
        self.teacher_cls_size = teacher_cls_size or cls_size
        self.batch_size = batch_size
        rng = make_rng(seed, "ksm-init")
        f = cfg.feature_size
        self.feature_student = MLP([cls_size, cfg.feature_hidden or cls_size, f], rng)
        self.feature_teacher = MLP([self.teacher_cls_size, cfg.feature_hidden or self.teacher_cls_size, f], rng)
        self.state_size = batch_size * 2 * f
        hidden = cfg.hidden_size
        self.actor = MLP([self.state_size, hidden, hidden, 4], rng)
        self.critic = MLP([self.state_size + 4, hidden, hidden, 1], rng)
        if cfg.actor_final_init is not None:
            # near-zero output layer: the untrained policy weighs every knowledge type at about 0.5
            head = self.actor.layers[-1]
            head.weight.data = rng.uniform(-cfg.actor_final_init, cfg.actor_final_init, size=head.weight.shape)
        self._optimizers = None

    # parameter groups updated by each objective
    def actor_parameters(self):
        return self.feature_student.parameters() + self.actor.parameters()

    def critic_parameters(self):
        return self.feature_teacher.parameters() + self.critic.parameters()

    def optimizers(self):
        if self._optimizers is None:
            self._optimizers = (
                make_optimizer(self.config.optimizer, self.actor_parameters(), self.config.actor_lr),
                make_optimizer(self.config.optimizer, self.critic_parameters(), self.config.critic_lr),
            )
        return self._optimizers

    def reset_optimizers(self) -> None:
        self._optimizers = None


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------

def state_vectors(nets: KnowledgeSelectionModule, raw: RawStates) -> Tensor:
    """Feature-network state for every step in ``raw``: ``[n, batch * 2F]``."""
    cs, ct = np.asarray(raw.student, dtype=np.float64), np.asarray(raw.teacher, dtype=np.float64)
    if cs.ndim != 3 or ct.ndim != 3 or cs.shape[:2] != ct.shape[:2]:
        raise StateShapeError("raw states must be [n, batch, H] arrays of matching batch layout")
    n, b = cs.shape[:2]
    if b != nets.batch_size:
        raise StateShapeError(f"batch of {b} samples, KSM configured for {nets.batch_size}")
    f = nets.config.feature_size
    vs = nets.feature_student(T.Tensor(cs.reshape(n * b, -1))).reshape(n, b, f)
    vt = nets.feature_teacher(T.Tensor(ct.reshape(n * b, -1))).reshape(n, b, f)
    return T.concat([vs, vt], axis=-1).reshape(n, b * 2 * f)


def _as_state_matrix(nets: KnowledgeSelectionModule, states) -> Tensor:
    if isinstance(states, RawStates):
        return state_vectors(nets, states)
    if isinstance(states, State):
        return states.vector
    s = T._as_tensor(states)
    return s.reshape(1, -1) if s.ndim == 1 else s


def build_state(student_out, teacher_out, nets: KnowledgeSelectionModule, step: int = 0) -> State:
    """State from the last-layer CLS embeddings of two model outputs on one batch."""
    cs = student_out.cls_embeddings[-1].data
    ct = teacher_out.cls_embeddings[-1].data
    if cs.shape[0] != ct.shape[0]:
        raise StateShapeError("student and teacher outputs come from different batches")
    return State(state_vectors(nets, RawStates(cs[None], ct[None])), step)


def actor_forward(nets: KnowledgeSelectionModule, states) -> Tensor:
    return T.sigmoid(nets.actor(_as_state_matrix(nets, states)))


def act(nets: KnowledgeSelectionModule, state, step: int | None = None) -> Action:
    """Deterministic policy output ``sigmoid(actor(s))``."""
    with T.no_grad():
        values = actor_forward(nets, state).data.reshape(-1, 4)[0].copy()
    if step is None:
        step = state.step if isinstance(state, State) else 0
    return Action(values, nets.config.action_mode, step)


def q_value(nets: KnowledgeSelectionModule, states, actions) -> Tensor:
    """Critic estimate ``Q(s, a)`` for each row; returns shape ``[n]``."""
    s = _as_state_matrix(nets, states)
    if isinstance(actions, Action):
        actions = actions.values
    a = T._as_tensor(actions)
    a = a.reshape(1, 4) if a.ndim == 1 else a
    return nets.critic(T.concat([s, a], axis=-1)).reshape(-1)


# ---------------------------------------------------------------------------
# rewards and TD algebra
# ---------------------------------------------------------------------------

def discount_power(gamma: float, t: int) -> float:
    """``gamma**t`` accumulated by repeated multiplication."""
    if t < 0:
        raise ValueError("step index must be non-negative")
    out = 1.0
    for _ in range(t):
        out *= gamma
    return out


def discount_powers(gamma: float, n: int) -> np.ndarray:
    """``[gamma**0, ..., gamma**(n-1)]`` by running product."""
    out = np.empty(n)
    acc = 1.0
    for i in range(n):
        out[i] = acc
        acc *= gamma
    return out


def td_target(reward: float, t: int, q_next, gamma: float):
    """Bootstrapped value ``gamma**t * r + Q(s', a')`` with ``q_next`` detached."""
    if t < 0:
        raise ValueError("step index must be non-negative")
    if isinstance(q_next, Tensor):
        q_next = q_next.data
    return discount_power(gamma, t) * reward + q_next


def estimated_reward(q_t, q_next, t: int, gamma: float, floor: float = 1e-6):
    """Per-step reward implied by the critic: ``(Q_t - Q_{t+1}) / gamma**t``."""
    g = discount_power(gamma, t)
    if g < floor:
        raise ScheduleError(f"gamma**t = {g:.3e} is below the floor {floor:.1e}")
    return (q_t - q_next) * (1.0 / g)


def exploration_reward_soft(action, prev_actions: Sequence, scale: float) -> float:
    """``scale * (1 - mean cosine similarity to the previous phase's actions)``."""
    a = np.asarray(action.values if isinstance(action, Action) else action, dtype=np.float64)
    prev = np.asarray([p.values if isinstance(p, Action) else p for p in prev_actions], dtype=np.float64)
    if prev.size == 0:
        raise ValueError("no previous actions")
    na = np.linalg.norm(a)
    norms = np.linalg.norm(prev, axis=1)
    if na == 0 or np.any(norms == 0):
        raise T.DomainError("cosine similarity of a zero action vector")
    sims = prev @ a / (norms * na)
    return float(scale * (1.0 - sims.mean()))


def exploration_reward_hard(gate, prev_gates: Sequence, scale: float) -> float:
    """``scale * (1 - count(gate) / k)`` where equality is gate-vector equality."""
    g = tuple(np.asarray(gate).astype(int).tolist())
    prev = [tuple(np.asarray(p).astype(int).tolist()) for p in prev_gates]
    if not prev:
        raise ValueError("no previous gates")
    return float(scale * (1.0 - prev.count(g) / len(prev)))


# ---------------------------------------------------------------------------
# objectives over a phase of transitions
# ---------------------------------------------------------------------------

@dataclass
class PhaseTransitions:
    """Steps ``b(j)..e(j)`` of one phase plus the successor of the last step.

    ``next_states`` / ``next_action`` describe the step after the phase;
    ``None`` marks the end of training, whose value is zero.
    """

    states: RawStates | Tensor | np.ndarray
    actions: np.ndarray  # [k, 4]
    local_steps: np.ndarray  # [k] step index within the phase, from 0
    rewards: np.ndarray | None = None  # [k] immediate rewards (non-phase ablation)
    explore_rewards: np.ndarray | None = None  # [k]
    next_state: RawStates | Tensor | np.ndarray | None = None  # one step
    next_action: np.ndarray | None = None  # [4]

    def __len__(self) -> int:
        return len(self.actions)


def _q_pairs(nets, tr: PhaseTransitions) -> tuple[Tensor, Tensor]:
    """``(Q(s_t, a_t), Q(s_{t+1}, a_{t+1}))`` for every step of the phase."""
    k = len(tr)
    if k == 0:
        raise ValueError("empty phase")
    q = q_value(nets, tr.states, np.asarray(tr.actions, dtype=np.float64))
    if tr.next_state is not None:
        q_after = q_value(nets, tr.next_state, np.asarray(tr.next_action, dtype=np.float64))
    else:
        q_after = T.tensor([0.0])
    q_next = T.concat([q[1:], q_after], axis=0) if k > 1 else q_after
    return q, q_next


def _discounts(nets, tr: PhaseTransitions) -> np.ndarray:
    gamma, floor = nets.config.discount, nets.config.discount_floor
    g = np.array([discount_power(gamma, int(t)) for t in tr.local_steps])
    if np.any(g < floor):
        raise ScheduleError("gamma**t below floor inside a phase")
    return g


def estimated_rewards(nets, tr: PhaseTransitions) -> Tensor:
    q, q_next = _q_pairs(nets, tr)
    return (q - q_next) * (1.0 / _discounts(nets, tr))


def critic_step_loss(nets, tr: PhaseTransitions) -> Tensor:
    """Mean squared TD error with the bootstrap term detached."""
    if tr.rewards is None:
        raise ValueError("immediate rewards are required for the TD objective")
    q, q_next = _q_pairs(nets, tr)
    target = _discounts(nets, tr) * np.asarray(tr.rewards, dtype=np.float64) + q_next.data
    diff = q - target
    return (diff * diff).mean()


def phase_loss(nets, tr: PhaseTransitions, phase_reward: float) -> Tensor:
    """Squared gap between the phase reward and the summed estimated rewards."""
    r_hat = estimated_rewards(nets, tr)
    diff = r_hat.sum() - float(phase_reward)
    return diff * diff


def exploration_loss(nets, tr: PhaseTransitions) -> Tensor:
    """MSE between estimated per-step rewards and the exploration rewards."""
    if tr.explore_rewards is None:
        raise ValueError("exploration rewards missing")
    diff = estimated_rewards(nets, tr) - np.asarray(tr.explore_rewards, dtype=np.float64)
    return (diff * diff).mean()


def actor_objective(nets, states) -> Tensor:
    """Mean critic value of the actor's own actions, ``mean Q(s, mu(s))``."""
    s = _as_state_matrix(nets, states)
    a = actor_forward(nets, s)
    return q_value(nets, s, a).mean()


def actor_step(nets, states, optimizer=None) -> float:
    """One deterministic-policy-gradient ascent step on the actor (and student feature net)."""
    optimizer = optimizer or nets.optimizers()[0]
    nets.zero_grad()
    objective = actor_objective(nets, states)
    (-objective).backward()
    for p in optimizer.params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    optimizer.step()
    nets.zero_grad()
    return objective.item()


def critic_step(nets, loss: Tensor, optimizer=None) -> float:
    optimizer = optimizer or nets.optimizers()[1]
    loss.backward()
    for p in optimizer.params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    optimizer.step()
    nets.zero_grad()
    return loss.item()


def update_on_phase(nets: KnowledgeSelectionModule, tr: PhaseTransitions, phase_reward: float | None) -> dict:
    """Critic then actor update at the end of a phase.

    In phase mode the critic loss is the phase objective plus the weighted
    exploration objective; in immediate mode the phase objective is replaced
    by the TD loss on per-step rewards.
    """
    cfg = nets.config
    nets.zero_grad()
    if cfg.reward_mode == "phase":
        main = phase_loss(nets, tr, phase_reward)
    else:
        main = critic_step_loss(nets, tr)
    total = main
    explore = None
    if cfg.exploration_weight > 0 and tr.explore_rewards is not None:
        explore = exploration_loss(nets, tr)
        total = total + explore * cfg.exploration_weight
    critic_value = critic_step(nets, total)
    actor_value = actor_step(nets, tr.states)
    return {
        "critic_loss": critic_value,
        "main_loss": main.item(),
        "exploration_loss": None if explore is None else explore.item(),
        "actor_objective": actor_value,
    }
